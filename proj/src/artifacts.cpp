#include "srco/artifacts.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace srco {

using nlohmann::json;

std::string json_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

// JSON has no non-finite literals; metrics that never got computed (failed
// fits) or blew up are stored as null
std::string num_or_null(double x) { return std::isfinite(x) ? format_double(x) : "null"; }

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

json parse_line(const std::string& line, const std::string& path) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    fail(ErrorCode::IoError, path + ": malformed record: " + line.substr(0, 80));
  return j;
}

void check_header(const json& j, const std::string& kind, const Vocab* vocab,
                  const std::string& path) {
  if (j.value("kind", "") != kind)
    fail(ErrorCode::IoError, path + ": expected a " + kind + " file");
  if (j.value("schema_version", -1) != kArtifactSchemaVersion)
    fail(ErrorCode::VersionMismatch, path + ": unsupported schema version");
  if (vocab && j.value("vocab_fingerprint", "") != hex64(vocab->fingerprint()))
    fail(ErrorCode::VocabMismatch, path + ": written with a different vocabulary");
}

// re-validate a token string on reload: it must parse back into a tree
PostfixTemplate parse_template(const std::string& tokens_text, const Vocab& vocab,
                               const std::string& path) {
  std::vector<TokenId> tokens;
  try {
    tokens = vocab.tokens_from_string(tokens_text);
    (void)parse_postfix(tokens, vocab);
  } catch (const Error& e) {
    fail(ErrorCode::IoError, path + ": invalid template \"" + tokens_text + "\": " + e.what());
  }
  PostfixTemplate tmpl;
  tmpl.tokens = std::move(tokens);
  for (TokenId t : tmpl.tokens)
    if (vocab.is_cof(t)) ++tmpl.num_cof;
  return tmpl;
}

}  // namespace

// ============================================================================
//  Corpus
// ============================================================================

void write_corpus_file(const std::string& path, std::span<const CorpusEntry> corpus,
                       const Vocab& vocab) {
  std::string out;
  out += "{\"schema_version\":1,\"kind\":\"corpus\",\"vocab_fingerprint\":\"" +
         hex64(vocab.fingerprint()) + "\",\"entries\":" + std::to_string(corpus.size()) + "}\n";
  for (const CorpusEntry& e : corpus) {
    out += "{\"dataset\":\"" + json_escape(e.source_dataset) + "\",\"tokens\":\"" +
           json_escape(vocab.tokens_to_string(e.tmpl.tokens)) +
           "\",\"train_r2\":" + num_or_null(e.train_r2) + "}\n";
  }
  atomic_write_file(path, out);
}

std::vector<CorpusEntry> read_corpus_file(const std::string& path, const Vocab& vocab) {
  const std::vector<std::string> lines = split_lines(read_file(path));
  if (lines.empty()) fail(ErrorCode::EmptyFile, path + ": empty corpus file");
  const json header = parse_line(lines[0], path);
  check_header(header, "corpus", &vocab, path);
  std::vector<CorpusEntry> corpus;
  for (size_t i = 1; i < lines.size(); ++i) {
    const json j = parse_line(lines[i], path);
    CorpusEntry e;
    e.source_dataset = j.value("dataset", "");
    e.tmpl = parse_template(j.value("tokens", ""), vocab, path);
    e.train_r2 = j.value("train_r2", 0.0);
    corpus.push_back(std::move(e));
  }
  const auto declared = header.value("entries", -1);
  if (declared != static_cast<int>(corpus.size()))
    fail(ErrorCode::IoError, path + ": header declares " + std::to_string(declared) +
                                 " entries, found " + std::to_string(corpus.size()));
  return corpus;
}

// ============================================================================
//  Pool
// ============================================================================

void write_pool_file(const std::string& path, const PoolResult& pool, const Vocab& vocab) {
  std::string out;
  out += "{\"schema_version\":1,\"kind\":\"pool\",\"vocab_fingerprint\":\"" +
         hex64(vocab.fingerprint()) +
         "\",\"survivors\":" + std::to_string(pool.survivors.size()) + "}\n";
  for (const Candidate& c : pool.survivors) {
    out += "{\"tokens\":\"" + json_escape(vocab.tokens_to_string(c.tmpl.tokens)) +
           "\",\"proxy_score\":" + num_or_null(c.proxy_score) +
           ",\"complexity\":" + std::to_string(complexity(c.tmpl)) + "}\n";
  }
  const PoolStats& s = pool.stats;
  out += "{\"kind\":\"stats\",\"sampled\":" + std::to_string(s.sampled) +
         ",\"syntax_rejected\":" + std::to_string(s.syntax_rejected) +
         ",\"semantic_rejected\":" + std::to_string(s.semantic_rejected) +
         ",\"complexity_rejected\":" + std::to_string(s.complexity_rejected) +
         ",\"budget_rejected\":" + std::to_string(s.budget_rejected) +
         ",\"overlength_rejected\":" + std::to_string(s.overlength_rejected) +
         ",\"duplicates_merged\":" + std::to_string(s.duplicates_merged) +
         ",\"survivors\":" + std::to_string(s.survivors) + "}\n";
  atomic_write_file(path, out);
}

PoolResult read_pool_file(const std::string& path, const Vocab& vocab) {
  const std::vector<std::string> lines = split_lines(read_file(path));
  if (lines.size() < 2) fail(ErrorCode::EmptyFile, path + ": truncated pool file");
  const json header = parse_line(lines[0], path);
  check_header(header, "pool", &vocab, path);

  PoolResult pool;
  const json tail = parse_line(lines.back(), path);
  if (tail.value("kind", "") != "stats")
    fail(ErrorCode::IoError, path + ": missing trailing stats record");
  pool.stats.sampled = tail.value("sampled", 0);
  pool.stats.syntax_rejected = tail.value("syntax_rejected", 0);
  pool.stats.semantic_rejected = tail.value("semantic_rejected", 0);
  pool.stats.complexity_rejected = tail.value("complexity_rejected", 0);
  pool.stats.budget_rejected = tail.value("budget_rejected", 0);
  pool.stats.overlength_rejected = tail.value("overlength_rejected", 0);
  pool.stats.duplicates_merged = tail.value("duplicates_merged", 0);
  pool.stats.survivors = tail.value("survivors", 0);

  for (size_t i = 1; i + 1 < lines.size(); ++i) {
    const json j = parse_line(lines[i], path);
    Candidate c;
    c.tmpl = parse_template(j.value("tokens", ""), vocab, path);
    c.proxy_score = j.value("proxy_score", 0.0);
    if (j.value("complexity", -1) != complexity(c.tmpl))
      fail(ErrorCode::IoError, path + ": stored complexity disagrees with token count");
    pool.survivors.push_back(std::move(c));
  }
  if (static_cast<int>(pool.survivors.size()) != header.value("survivors", -1))
    fail(ErrorCode::IoError, path + ": header/record count mismatch");
  return pool;
}

// ============================================================================
//  Results
// ============================================================================

namespace {

std::string fitted_record(const FittedEquation& fe, const Vocab& vocab) {
  std::string out = "{\"tokens\":\"" + json_escape(vocab.tokens_to_string(fe.tmpl.tokens)) + "\"";
  out += ",\"infix\":\"" + json_escape(fe.failed ? "" : fe.infix(vocab)) + "\"";
  out += ",\"w\":[";
  for (size_t i = 0; i < fe.w.size(); ++i) {
    if (i) out += ",";
    out += num_or_null(fe.w[i]);
  }
  out += "]";
  out += ",\"proxy_score\":" + num_or_null(fe.proxy_score);
  out += ",\"train_loss\":" + num_or_null(fe.train_loss);
  out += ",\"train_mse\":" + num_or_null(fe.train_mse);
  out += ",\"test_mse\":" + num_or_null(fe.test_mse);
  out += ",\"test_log_mse\":" + num_or_null(fe.test_log_mse);
  out += ",\"test_r2\":" + num_or_null(fe.test_r2);
  out += ",\"test_pearson\":" + (fe.test_pearson ? num_or_null(*fe.test_pearson)
                                                 : std::string("null"));
  out += ",\"complexity\":" + std::to_string(fe.complexity_value);
  out += ",\"fit_evals\":" + std::to_string(fe.fit_evals);
  out += std::string(",\"failed\":") + (fe.failed ? "true" : "false");
  out += ",\"failure\":\"" + json_escape(fe.failure) + "\"}";
  return out;
}

FittedEquation parse_fitted(const json& j, const Vocab& vocab, const std::string& path) {
  FittedEquation fe;
  fe.tmpl = parse_template(j.value("tokens", ""), vocab, path);
  if (j.contains("w"))
    for (const auto& v : j.at("w"))
      fe.w.push_back(v.is_number() ? v.get<double>() : std::nan(""));
  auto num = [&](const char* key) {
    return j.contains(key) && j.at(key).is_number() ? j.at(key).get<double>() : std::nan("");
  };
  fe.proxy_score = num("proxy_score");
  fe.train_loss = num("train_loss");
  fe.train_mse = num("train_mse");
  fe.test_mse = num("test_mse");
  fe.test_log_mse = num("test_log_mse");
  fe.test_r2 = num("test_r2");
  if (j.contains("test_pearson") && j.at("test_pearson").is_number())
    fe.test_pearson = j.at("test_pearson").get<double>();
  fe.complexity_value = j.value("complexity", complexity(fe.tmpl));
  fe.fit_evals = j.value("fit_evals", 0L);
  fe.failed = j.value("failed", false);
  fe.failure = j.value("failure", "");
  return fe;
}

}  // namespace

void write_results_file(const std::string& path, std::span<const FittedEquation> fitted,
                        const FittedEquation& selected, int c_max, const Vocab& vocab) {
  std::string out;
  out += "{\"schema_version\":1,\"kind\":\"results\",\"vocab_fingerprint\":\"" +
         hex64(vocab.fingerprint()) + "\",\"candidates\":" + std::to_string(fitted.size()) +
         ",\"c_max\":" + std::to_string(c_max) + "}\n";
  for (const FittedEquation& fe : fitted) out += fitted_record(fe, vocab) + "\n";
  out += "{\"kind\":\"selected\",\"equation\":" + fitted_record(selected, vocab) + "}\n";
  atomic_write_file(path, out);
}

ResultsFile read_results_file(const std::string& path, const Vocab& vocab) {
  const std::vector<std::string> lines = split_lines(read_file(path));
  if (lines.size() < 2) fail(ErrorCode::EmptyFile, path + ": truncated results file");
  const json header = parse_line(lines[0], path);
  check_header(header, "results", &vocab, path);

  ResultsFile rf;
  rf.c_max = header.value("c_max", 0);
  const json tail = parse_line(lines.back(), path);
  if (tail.value("kind", "") != "selected" || !tail.contains("equation"))
    fail(ErrorCode::IoError, path + ": missing trailing selected record");
  rf.selected = parse_fitted(tail.at("equation"), vocab, path);
  for (size_t i = 1; i + 1 < lines.size(); ++i)
    rf.fitted.push_back(parse_fitted(parse_line(lines[i], path), vocab, path));
  if (static_cast<int>(rf.fitted.size()) != header.value("candidates", -1))
    fail(ErrorCode::IoError, path + ": header/record count mismatch");
  return rf;
}

// ============================================================================
//  Training log / benchmark specs / CSV
// ============================================================================

void write_loss_csv(const std::string& path, const TrainResult& result) {
  std::string out = "epoch,train_ce,heldout_ce\n";
  for (const EpochStats& e : result.history) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_ce) + "," +
           (std::isfinite(e.heldout_ce) ? format_double(e.heldout_ce) : "nan") + "\n";
  }
  atomic_write_file(path, out);
}

void write_benchmark_specs(const std::string& path, std::span<const BenchmarkSpec> specs) {
  std::string out;
  for (const BenchmarkSpec& s : specs) {
    out += "{\"name\":\"" + json_escape(s.name) + "\",\"tier\":\"" + json_escape(s.tier) +
           "\",\"d\":" + std::to_string(s.d) + ",\"expression\":\"" + json_escape(s.expression) +
           "\",\"train_n\":" + std::to_string(s.train_n) +
           ",\"test_n\":" + std::to_string(s.test_n) + ",\"box\":[";
    for (size_t i = 0; i < s.input_box.size(); ++i) {
      if (i) out += ",";
      out += "[" + format_double(s.input_box[i].first) + "," +
             format_double(s.input_box[i].second) + "]";
    }
    out += "],\"seed\":" + std::to_string(s.seed) + "}\n";
  }
  atomic_write_file(path, out);
}

std::vector<BenchmarkSpec> read_benchmark_specs(const std::string& path) {
  std::vector<BenchmarkSpec> specs;
  for (const std::string& line : split_lines(read_file(path))) {
    const json j = parse_line(line, path);
    BenchmarkSpec s;
    s.name = j.value("name", "");
    s.tier = j.value("tier", "");
    s.d = j.value("d", 0);
    s.expression = j.value("expression", "");
    s.train_n = j.value("train_n", 200);
    s.test_n = j.value("test_n", 200);
    if (j.contains("box"))
      for (const auto& pair : j.at("box"))
        s.input_box.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
    s.seed = j.value("seed", 0ULL);
    specs.push_back(std::move(s));
  }
  if (specs.empty()) fail(ErrorCode::EmptyFile, path + ": no benchmark specs");
  return specs;
}

void write_csv(const std::string& path, std::span<const std::string> header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) out += ",";
    out += header[i];
  }
  out += "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += row[i];
    }
    out += "\n";
  }
  atomic_write_file(path, out);
}

}  // namespace srco
