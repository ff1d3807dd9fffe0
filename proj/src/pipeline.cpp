#include "srco/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <json.hpp>

#include "srco/eval.hpp"

namespace srco {

namespace fs = std::filesystem;
using nlohmann::json;

// ============================================================================
//  Config validation
// ============================================================================

void RunConfig::validate() const {
  if (out_dir.empty()) fail(ErrorCode::ConfigError, "out_dir must not be empty");
  if (csv_path.empty() && benchmark.empty())
    fail(ErrorCode::ConfigError, "either a benchmark name or a csv_path is required");
  if (!csv_path.empty() && csv_target.empty())
    fail(ErrorCode::ConfigError, "csv_target is required with csv_path");
  if (!(csv_test_fraction > 0.0 && csv_test_fraction < 1.0))
    fail(ErrorCode::ConfigError, "csv_test_fraction must lie in (0, 1)");
  if (bootstrap_benchmarks.empty())
    fail(ErrorCode::ConfigError, "at least one bootstrap benchmark is required");
  if (corpus_per_dataset < 1)
    fail(ErrorCode::ConfigError, "corpus_per_dataset must be at least 1");
  if (c_max < 1) fail(ErrorCode::ConfigError, "c_max must be at least 1");
  if (c_max > sampler.l_max)
    fail(ErrorCode::ConfigError, "c_max cannot exceed the sampler's l_max");
  if (holdout_selection && !(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    fail(ErrorCode::ConfigError, "holdout_fraction must lie in (0, 1)");
  if (jobs < 1) fail(ErrorCode::ConfigError, "jobs must be at least 1");
  if (sampler.l_max + 2 > prior.max_seq_len)
    fail(ErrorCode::ConfigError, "sampler l_max + 2 exceeds the prior's max_seq_len");
  if (gp.max_template_len + 2 > prior.max_seq_len)
    fail(ErrorCode::ConfigError, "gp max_template_len + 2 exceeds the prior's max_seq_len");
  gp.validate();
  prior.validate();
  fit.validate();
  SamplerConfig effective = sampler;
  effective.c_max = c_max;
  effective.validate();
}

namespace {

// Stage seeds all derive from the global seed, so one number reproduces the
// whole run.
GpConfig staged_gp(const RunConfig& c) {
  GpConfig g = c.gp;
  g.seed = derive_seed(c.seed, "stage.bootstrap");
  return g;
}

PriorConfig staged_prior(const RunConfig& c) {
  PriorConfig p = c.prior;
  p.seed = derive_seed(c.seed, "stage.prior");
  return p;
}

SamplerConfig staged_sampler(const RunConfig& c) {
  SamplerConfig s = c.sampler;
  s.c_max = c.c_max;  // one complexity budget for filtering and selection
  s.seed = derive_seed(c.seed, "stage.search");
  return s;
}

FitConfig staged_fit(const RunConfig& c) {
  FitConfig f = c.fit;
  f.seed = derive_seed(c.seed, "stage.fit");
  return f;
}

uint64_t data_seed(const RunConfig& c, const std::string& name) {
  return derive_seed(c.seed, "stage.data", fnv1a64(name));
}

}  // namespace

// ============================================================================
//  Config file I/O
// ============================================================================

namespace {

[[noreturn]] void bad_key(const std::string& scope, const std::string& key) {
  fail(ErrorCode::ConfigError, "unknown config key: " + scope + key);
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) fail(ErrorCode::ConfigError, key + " must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) fail(ErrorCode::ConfigError, key + " must be an integer");
  return v.get<int>();
}

uint64_t as_u64(const json& v, const std::string& key) {
  if (!(v.is_number_integer() && v.get<long long>() >= 0) && !v.is_number_unsigned())
    fail(ErrorCode::ConfigError, key + " must be a non-negative integer");
  return v.get<uint64_t>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) fail(ErrorCode::ConfigError, key + " must be a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) fail(ErrorCode::ConfigError, key + " must be a string");
  return v.get<std::string>();
}

void parse_gp(const json& obj, GpConfig& g) {
  for (const auto& [key, v] : obj.items()) {
    const std::string k = "gp." + key;
    if (key == "population_size") g.population_size = as_int(v, k);
    else if (key == "generations") g.generations = as_int(v, k);
    else if (key == "max_depth") g.max_depth = as_int(v, k);
    else if (key == "parsimony_coefficient") g.parsimony_coefficient = as_double(v, k);
    else if (key == "tournament_size") g.tournament_size = as_int(v, k);
    else if (key == "crossover_prob") g.crossover_prob = as_double(v, k);
    else if (key == "subtree_mutation_prob") g.subtree_mutation_prob = as_double(v, k);
    else if (key == "point_mutation_prob") g.point_mutation_prob = as_double(v, k);
    else if (key == "point_replace_rate") g.point_replace_rate = as_double(v, k);
    else if (key == "constant_min") g.constant_range.first = as_double(v, k);
    else if (key == "constant_max") g.constant_range.second = as_double(v, k);
    else if (key == "constant_jitter_sigma") g.constant_jitter_sigma = as_double(v, k);
    else if (key == "min_fit_r2") g.min_fit_r2 = as_double(v, k);
    else if (key == "max_template_len") g.max_template_len = as_int(v, k);
    else if (key == "corpus_floor") g.corpus_floor = as_int(v, k);
    else bad_key("gp.", key);
  }
}

void parse_prior(const json& obj, PriorConfig& p) {
  for (const auto& [key, v] : obj.items()) {
    const std::string k = "prior." + key;
    if (key == "d_model") p.d_model = as_int(v, k);
    else if (key == "num_layers") p.num_layers = as_int(v, k);
    else if (key == "num_heads") p.num_heads = as_int(v, k);
    else if (key == "ffn_dim") p.ffn_dim = as_int(v, k);
    else if (key == "max_seq_len") p.max_seq_len = as_int(v, k);
    else if (key == "dropout") p.dropout = as_double(v, k);
    else if (key == "learning_rate") p.learning_rate = as_double(v, k);
    else if (key == "batch_size") p.batch_size = as_int(v, k);
    else if (key == "epochs") p.epochs = as_int(v, k);
    else if (key == "warmup_steps") p.warmup_steps = as_int(v, k);
    else if (key == "grad_clip") p.grad_clip = as_double(v, k);
    else if (key == "holdout_fraction") p.holdout_fraction = as_double(v, k);
    else if (key == "init_scale") p.init_scale = as_double(v, k);
    else bad_key("prior.", key);
  }
}

void parse_sampler(const json& obj, SamplerConfig& s) {
  for (const auto& [key, v] : obj.items()) {
    const std::string k = "sampler." + key;
    if (key == "temperature") s.temperature = as_double(v, k);
    else if (key == "top_k") s.top_k = as_int(v, k);
    else if (key == "num_samples") s.num_samples = as_int(v, k);
    else if (key == "l_max") s.l_max = as_int(v, k);
    else if (key == "max_term") s.max_term = as_int(v, k);
    else if (key == "max_trig_vars") s.max_trig_vars = as_int(v, k);
    else if (key == "semantic_probe_count") s.semantic_probe_count = as_int(v, k);
    else if (key == "retry_cap") s.retry_cap = as_int(v, k);
    // the complexity budget is the run-level c_max; a sampler-local value
    // would silently disagree with selection, so it is not accepted here
    else bad_key("sampler.", key);
  }
}

void parse_fit(const json& obj, FitConfig& f) {
  for (const auto& [key, v] : obj.items()) {
    const std::string k = "fit." + key;
    if (key == "optimizer") {
      const std::string name = as_string(v, k);
      if (name == "gradient") f.optimizer = FitOptimizer::Gradient;
      else if (name == "hillclimb") f.optimizer = FitOptimizer::HillClimb;
      else fail(ErrorCode::ConfigError, "fit.optimizer must be 'gradient' or 'hillclimb'");
    }
    else if (key == "init_min") f.init_range.first = as_double(v, k);
    else if (key == "init_max") f.init_range.second = as_double(v, k);
    else if (key == "num_restarts") f.num_restarts = as_int(v, k);
    else if (key == "max_iters") f.max_iters = as_int(v, k);
    else if (key == "learning_rate") f.learning_rate = as_double(v, k);
    else if (key == "plateau_patience") f.plateau_patience = as_int(v, k);
    else if (key == "plateau_tol") f.plateau_tol = as_double(v, k);
    else if (key == "max_lr_halvings") f.max_lr_halvings = as_int(v, k);
    else if (key == "hc_step_sigma") f.hc_step_sigma = as_double(v, k);
    else if (key == "loss_eval_budget") f.loss_eval_budget = static_cast<long>(as_u64(v, k));
    else bad_key("fit.", key);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded() || !root.is_object())
    fail(ErrorCode::ConfigError, "config must be a structured-text object");
  RunConfig c;
  for (const auto& [key, v] : root.items()) {
    if (key == "out_dir") c.out_dir = as_string(v, key);
    else if (key == "benchmark") c.benchmark = as_string(v, key);
    else if (key == "csv_path") c.csv_path = as_string(v, key);
    else if (key == "csv_target") c.csv_target = as_string(v, key);
    else if (key == "csv_test_fraction") c.csv_test_fraction = as_double(v, key);
    else if (key == "bootstrap_benchmarks") {
      if (!v.is_array()) fail(ErrorCode::ConfigError, "bootstrap_benchmarks must be an array");
      c.bootstrap_benchmarks.clear();
      for (const auto& name : v) c.bootstrap_benchmarks.push_back(as_string(name, key));
    }
    else if (key == "corpus_per_dataset") c.corpus_per_dataset = as_int(v, key);
    else if (key == "gp") parse_gp(v, c.gp);
    else if (key == "prior") parse_prior(v, c.prior);
    else if (key == "sampler") parse_sampler(v, c.sampler);
    else if (key == "fit") parse_fit(v, c.fit);
    else if (key == "c_max") c.c_max = as_int(v, key);
    else if (key == "seed") c.seed = as_u64(v, key);
    else if (key == "holdout_selection") c.holdout_selection = as_bool(v, key);
    else if (key == "holdout_fraction") c.holdout_fraction = as_double(v, key);
    else if (key == "jobs") c.jobs = as_int(v, key);
    else bad_key("", key);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
  return parse_run_config(text);
}

std::string write_config_json(const RunConfig& c) {
  std::string s = "{";
  s += "\"out_dir\":\"" + json_escape(c.out_dir) + "\"";
  s += ",\"benchmark\":\"" + json_escape(c.benchmark) + "\"";
  s += ",\"csv_path\":\"" + json_escape(c.csv_path) + "\"";
  s += ",\"csv_target\":\"" + json_escape(c.csv_target) + "\"";
  s += ",\"csv_test_fraction\":" + format_double(c.csv_test_fraction);
  s += ",\"bootstrap_benchmarks\":[";
  for (size_t i = 0; i < c.bootstrap_benchmarks.size(); ++i) {
    if (i) s += ",";
    s += "\"" + json_escape(c.bootstrap_benchmarks[i]) + "\"";
  }
  s += "]";
  s += ",\"corpus_per_dataset\":" + std::to_string(c.corpus_per_dataset);
  s += ",\"gp\":{";
  s += "\"population_size\":" + std::to_string(c.gp.population_size);
  s += ",\"generations\":" + std::to_string(c.gp.generations);
  s += ",\"max_depth\":" + std::to_string(c.gp.max_depth);
  s += ",\"parsimony_coefficient\":" + format_double(c.gp.parsimony_coefficient);
  s += ",\"tournament_size\":" + std::to_string(c.gp.tournament_size);
  s += ",\"crossover_prob\":" + format_double(c.gp.crossover_prob);
  s += ",\"subtree_mutation_prob\":" + format_double(c.gp.subtree_mutation_prob);
  s += ",\"point_mutation_prob\":" + format_double(c.gp.point_mutation_prob);
  s += ",\"point_replace_rate\":" + format_double(c.gp.point_replace_rate);
  s += ",\"constant_min\":" + format_double(c.gp.constant_range.first);
  s += ",\"constant_max\":" + format_double(c.gp.constant_range.second);
  s += ",\"constant_jitter_sigma\":" + format_double(c.gp.constant_jitter_sigma);
  s += ",\"min_fit_r2\":" + format_double(c.gp.min_fit_r2);
  s += ",\"max_template_len\":" + std::to_string(c.gp.max_template_len);
  s += ",\"corpus_floor\":" + std::to_string(c.gp.corpus_floor);
  s += "}";
  s += ",\"prior\":{";
  s += "\"d_model\":" + std::to_string(c.prior.d_model);
  s += ",\"num_layers\":" + std::to_string(c.prior.num_layers);
  s += ",\"num_heads\":" + std::to_string(c.prior.num_heads);
  s += ",\"ffn_dim\":" + std::to_string(c.prior.ffn_dim);
  s += ",\"max_seq_len\":" + std::to_string(c.prior.max_seq_len);
  s += ",\"dropout\":" + format_double(c.prior.dropout);
  s += ",\"learning_rate\":" + format_double(c.prior.learning_rate);
  s += ",\"batch_size\":" + std::to_string(c.prior.batch_size);
  s += ",\"epochs\":" + std::to_string(c.prior.epochs);
  s += ",\"warmup_steps\":" + std::to_string(c.prior.warmup_steps);
  s += ",\"grad_clip\":" + format_double(c.prior.grad_clip);
  s += ",\"holdout_fraction\":" + format_double(c.prior.holdout_fraction);
  s += ",\"init_scale\":" + format_double(c.prior.init_scale);
  s += "}";
  s += ",\"sampler\":{";
  s += "\"temperature\":" + format_double(c.sampler.temperature);
  s += ",\"top_k\":" + std::to_string(c.sampler.top_k);
  s += ",\"num_samples\":" + std::to_string(c.sampler.num_samples);
  s += ",\"l_max\":" + std::to_string(c.sampler.l_max);
  s += ",\"max_term\":" + std::to_string(c.sampler.max_term);
  s += ",\"max_trig_vars\":" + std::to_string(c.sampler.max_trig_vars);
  s += ",\"semantic_probe_count\":" + std::to_string(c.sampler.semantic_probe_count);
  s += ",\"retry_cap\":" + std::to_string(c.sampler.retry_cap);
  s += "}";
  s += ",\"fit\":{";
  s += std::string("\"optimizer\":\"") +
       (c.fit.optimizer == FitOptimizer::Gradient ? "gradient" : "hillclimb") + "\"";
  s += ",\"init_min\":" + format_double(c.fit.init_range.first);
  s += ",\"init_max\":" + format_double(c.fit.init_range.second);
  s += ",\"num_restarts\":" + std::to_string(c.fit.num_restarts);
  s += ",\"max_iters\":" + std::to_string(c.fit.max_iters);
  s += ",\"learning_rate\":" + format_double(c.fit.learning_rate);
  s += ",\"plateau_patience\":" + std::to_string(c.fit.plateau_patience);
  s += ",\"plateau_tol\":" + format_double(c.fit.plateau_tol);
  s += ",\"max_lr_halvings\":" + std::to_string(c.fit.max_lr_halvings);
  s += ",\"hc_step_sigma\":" + format_double(c.fit.hc_step_sigma);
  s += ",\"loss_eval_budget\":" + std::to_string(c.fit.loss_eval_budget);
  s += "}";
  s += ",\"c_max\":" + std::to_string(c.c_max);
  s += ",\"seed\":" + std::to_string(c.seed);
  s += std::string(",\"holdout_selection\":") + (c.holdout_selection ? "true" : "false");
  s += ",\"holdout_fraction\":" + format_double(c.holdout_fraction);
  s += ",\"jobs\":" + std::to_string(c.jobs);
  s += "}";
  return s;
}

// ============================================================================
//  Manifest
// ============================================================================

void write_manifest(const std::string& path, const RunManifest& manifest) {
  std::string s = "{\"schema_version\":1,\"kind\":\"manifest\",\"tool_version\":\"";
  s += kToolVersion;
  s += "\",\"command\":\"" + json_escape(manifest.command) + "\"";
  s += ",\"seed\":" + std::to_string(manifest.seed);
  s += ",\"config\":" + manifest.config_json;
  s += ",\"artifacts\":[";
  for (size_t i = 0; i < manifest.artifact_checksums.size(); ++i) {
    if (i) s += ",";
    s += "{\"file\":\"" + json_escape(manifest.artifact_checksums[i].first) +
         "\",\"checksum\":\"" + manifest.artifact_checksums[i].second + "\"}";
  }
  s += "],\"timings\":[";
  for (size_t i = 0; i < manifest.timings.size(); ++i) {
    if (i) s += ",";
    s += "{\"stage\":\"" + json_escape(manifest.timings[i].stage) +
         "\",\"seconds\":" + format_double(manifest.timings[i].seconds) + "}";
  }
  s += "]}\n";
  atomic_write_file(path, s);
}

namespace {

const char* const kArtifactFiles[] = {
    "datasets.jsonl", "corpus.jsonl",       "prior.ckpt",
    "loss.csv",       "pool.jsonl",         "results.jsonl",
    "noise_sweep.csv", "sweep_max_term.csv", "sweep_max_trig_vars.csv",
    "sweep_temperature.csv", "sweep_top_k.csv", "ablation.csv", "timing.csv"};

void finalize_manifest(const RunConfig& config, const std::string& command,
                       std::vector<StageTiming> timings) {
  RunManifest m;
  m.command = command;
  m.seed = config.seed;
  m.config_json = write_config_json(config);
  for (const char* file : kArtifactFiles) {
    const std::string full = config.out_dir + "/" + file;
    if (fs::exists(full)) m.artifact_checksums.emplace_back(file, hex64(file_checksum(full)));
  }
  m.timings = std::move(timings);
  write_manifest(config.manifest_path(), m);
}

class StageClock {
 public:
  StageClock() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace

// ============================================================================
//  Shared plumbing
// ============================================================================

int vocab_vars(const RunConfig& config) {
  int d = 0;
  for (const std::string& name : config.bootstrap_benchmarks)
    d = std::max(d, find_desk_benchmark(name).d);
  if (config.csv_path.empty()) {
    d = std::max(d, find_desk_benchmark(config.benchmark).d);
  } else {
    d = std::max(d, load_csv(config.csv_path, config.csv_target).d());
  }
  return d;
}

Vocab make_vocab(const RunConfig& config) { return Vocab(vocab_vars(config)); }

std::vector<BenchmarkSpec> pipeline_benchmarks(const RunConfig& config) {
  std::vector<BenchmarkSpec> specs;
  auto add = [&](const std::string& name) {
    for (const BenchmarkSpec& s : specs)
      if (s.name == name) return;
    BenchmarkSpec spec = find_desk_benchmark(name);
    spec.seed = data_seed(config, name);
    specs.push_back(std::move(spec));
  };
  for (const std::string& name : config.bootstrap_benchmarks) add(name);
  if (config.csv_path.empty()) add(config.benchmark);
  return specs;
}

namespace {

TargetData split_csv(const RunConfig& config, const Dataset& all) {
  const int n = all.n();
  if (n < 2) fail(ErrorCode::ConfigError, "csv dataset needs at least 2 rows to split");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(data_seed(config, config.csv_path));
  std::shuffle(order.begin(), order.end(), rng);
  int test_n = static_cast<int>(std::llround(n * config.csv_test_fraction));
  test_n = std::clamp(test_n, 1, n - 1);

  auto gather = [&](int from, int count, const std::string& split) {
    Dataset ds;
    ds.name = all.name;
    ds.split = split;
    ds.feature_names = all.feature_names;
    ds.X = Matrix(count, all.d());
    ds.y.resize(count);
    for (int i = 0; i < count; ++i) {
      const int src = order[from + i];
      for (int j = 0; j < all.d(); ++j) ds.X(i, j) = all.X(src, j);
      ds.y[i] = all.y[src];
    }
    return ds;
  };

  TargetData out;
  out.train = gather(0, n - test_n, "train");
  out.test = gather(n - test_n, test_n, "test");
  // probe box from the training split only
  out.train.input_box.resize(all.d());
  for (int j = 0; j < all.d(); ++j) {
    double lo = out.train.X(0, j), hi = lo;
    for (int i = 1; i < out.train.n(); ++i) {
      lo = std::min(lo, out.train.X(i, j));
      hi = std::max(hi, out.train.X(i, j));
    }
    out.train.input_box[j] = {lo, hi};
  }
  out.test.input_box = out.train.input_box;
  return out;
}

}  // namespace

TargetData load_target(const RunConfig& config, const Vocab& vocab) {
  if (!config.csv_path.empty())
    return split_csv(config, load_csv(config.csv_path, config.csv_target));
  BenchmarkSpec spec = find_desk_benchmark(config.benchmark);
  spec.seed = data_seed(config, spec.name);
  auto [train, test] = generate_synthetic(spec, vocab);
  return {std::move(train), std::move(test)};
}

// ============================================================================
//  Stage bodies (shared between the single-stage commands and cmd_run)
// ============================================================================

namespace {

std::vector<CorpusEntry> stage_bootstrap(const RunConfig& config, const Vocab& vocab) {
  fs::create_directories(config.out_dir);
  const std::vector<BenchmarkSpec> specs = pipeline_benchmarks(config);
  write_benchmark_specs(config.datasets_path(), specs);

  std::vector<Dataset> train_sets;
  for (const std::string& name : config.bootstrap_benchmarks) {
    BenchmarkSpec spec = find_desk_benchmark(name);
    spec.seed = data_seed(config, name);
    train_sets.push_back(generate_synthetic(spec, vocab).first);
  }
  std::vector<CorpusEntry> corpus =
      build_corpus(train_sets, staged_gp(config), config.corpus_per_dataset, vocab);
  write_corpus_file(config.corpus_path(), corpus, vocab);
  return corpus;
}

TrainResult stage_train(const RunConfig& config, const Vocab& vocab) {
  const std::vector<CorpusEntry> corpus = read_corpus_file(config.corpus_path(), vocab);
  std::vector<PostfixTemplate> templates;
  templates.reserve(corpus.size());
  for (const CorpusEntry& e : corpus) templates.push_back(e.tmpl);
  TrainResult result = train(staged_prior(config), templates, vocab);
  save_checkpoint(result.model, config.checkpoint_path());
  write_loss_csv(config.loss_csv_path(), result);
  return result;
}

PoolResult stage_search(const RunConfig& config, const PriorModel& model,
                        const TargetData& target, const Vocab& vocab) {
  PoolResult pool =
      generate_pool(model, staged_sampler(config), target.train.input_box, vocab);
  write_pool_file(config.pool_path(), pool, vocab);
  return pool;
}

// Carves a validation split out of the training data for leakage-free
// selection (the --holdout path).
std::pair<Dataset, Dataset> holdout_split(const RunConfig& config, const Dataset& train) {
  const int n = train.n();
  const int val_n =
      std::clamp(static_cast<int>(std::llround(n * config.holdout_fraction)), 1, n - 1);
  if (n < 2)
    fail(ErrorCode::ConfigError, "training split too small for holdout selection");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(config.seed, "stage.holdout"));
  std::shuffle(order.begin(), order.end(), rng);

  auto gather = [&](int from, int count, const std::string& split) {
    Dataset ds;
    ds.name = train.name;
    ds.split = split;
    ds.feature_names = train.feature_names;
    ds.input_box = train.input_box;
    ds.X = Matrix(count, train.d());
    ds.y.resize(count);
    for (int i = 0; i < count; ++i) {
      const int src = order[from + i];
      for (int j = 0; j < train.d(); ++j) ds.X(i, j) = train.X(src, j);
      ds.y[i] = train.y[src];
    }
    return ds;
  };
  return {gather(0, n - val_n, "train"), gather(n - val_n, val_n, "validation")};
}

MetricReport scored_on(const PostfixTemplate& tmpl, std::span<const double> w,
                       const Dataset& ds, const Vocab& vocab) {
  const EvalResult r = evaluate(tmpl, w, ds.X, vocab);
  if (r.finite_count() != ds.n())
    fail(ErrorCode::NonFiniteInput, "equation is non-finite on the " + ds.split + " split");
  return compute_metrics(r.values, ds.y);
}

FitOutcome stage_fit(const RunConfig& config, const PoolResult& pool, const TargetData& target,
                     const Vocab& vocab) {
  const FitConfig f = staged_fit(config);
  FitOutcome out;
  if (!config.holdout_selection) {
    out.fitted = fit_pool(pool.survivors, target.train, target.test, f, vocab);
    out.selected = select_final(out.fitted, config.c_max, vocab);
  } else {
    auto [fit_train, validation] = holdout_split(config, target.train);
    out.fitted = fit_pool(pool.survivors, fit_train, validation, f, vocab);
    out.selected = select_final(out.fitted, config.c_max, vocab);
    // selection used validation metrics; report the untouched test split
    const MetricReport test = scored_on(out.selected.tmpl, out.selected.w, target.test, vocab);
    out.selected.test_mse = test.mse;
    out.selected.test_log_mse = test.log_mse;
    out.selected.test_r2 = test.r2;
    out.selected.test_pearson = test.pearson;
  }
  write_results_file(config.results_path(), out.fitted, out.selected, config.c_max, vocab);
  return out;
}

}  // namespace

// ============================================================================
//  Stage commands
// ============================================================================

std::vector<CorpusEntry> cmd_bootstrap(const RunConfig& config) {
  config.validate();
  StageClock clock;
  std::vector<CorpusEntry> corpus = stage_bootstrap(config, make_vocab(config));
  finalize_manifest(config, "bootstrap", {{"bootstrap", clock.seconds()}});
  return corpus;
}

TrainResult cmd_train_prior(const RunConfig& config) {
  config.validate();
  StageClock clock;
  TrainResult result = stage_train(config, make_vocab(config));
  finalize_manifest(config, "train-prior", {{"train-prior", clock.seconds()}});
  return result;
}

PoolResult cmd_search(const RunConfig& config) {
  config.validate();
  StageClock clock;
  const Vocab vocab = make_vocab(config);
  const PriorModel model = load_checkpoint(config.checkpoint_path(), vocab);
  const TargetData target = load_target(config, vocab);
  PoolResult pool = stage_search(config, model, target, vocab);
  finalize_manifest(config, "search", {{"search", clock.seconds()}});
  return pool;
}

FitOutcome cmd_fit(const RunConfig& config) {
  config.validate();
  StageClock clock;
  const Vocab vocab = make_vocab(config);
  const PoolResult pool = read_pool_file(config.pool_path(), vocab);
  const TargetData target = load_target(config, vocab);
  FitOutcome outcome = stage_fit(config, pool, target, vocab);
  finalize_manifest(config, "fit", {{"fit", clock.seconds()}});
  return outcome;
}

RunOutcome cmd_run(const RunConfig& config) {
  config.validate();
  std::vector<StageTiming> timings;
  const Vocab vocab = make_vocab(config);

  StageClock c1;
  const std::vector<CorpusEntry> corpus = stage_bootstrap(config, vocab);
  timings.push_back({"bootstrap", c1.seconds()});

  StageClock c2;
  const TrainResult trained = stage_train(config, vocab);
  timings.push_back({"train-prior", c2.seconds()});

  StageClock c3;
  const TargetData target = load_target(config, vocab);
  const PoolResult pool = stage_search(config, trained.model, target, vocab);
  timings.push_back({"search", c3.seconds()});

  StageClock c4;
  const FitOutcome outcome = stage_fit(config, pool, target, vocab);
  timings.push_back({"fit", c4.seconds()});

  finalize_manifest(config, "run", std::move(timings));

  RunOutcome out;
  out.corpus_size = static_cast<int>(corpus.size());
  out.init_heldout_ce = trained.init_heldout_ce;
  out.final_heldout_ce =
      trained.history.empty() ? trained.init_heldout_ce : trained.history.back().heldout_ce;
  out.pool_stats = pool.stats;
  out.fitted_count = static_cast<int>(outcome.fitted.size());
  out.selected = outcome.selected;
  return out;
}

// ============================================================================
//  Experiments
// ============================================================================

NoiseSweepOutcome cmd_noise_sweep(const RunConfig& config, std::span<const double> etas,
                                  double jitter, bool assert_monotone) {
  config.validate();
  StageClock clock;
  const Vocab vocab = make_vocab(config);
  const ResultsFile results = read_results_file(config.results_path(), vocab);
  if (results.selected.failed)
    fail(ErrorCode::NoFeasibleCandidate, "results file holds no usable selected equation");
  const TargetData target = load_target(config, vocab);

  NoiseSweepOutcome out;
  out.rows = noise_sweep(results.selected.tmpl, results.selected.w, target.train, target.test,
                         etas, derive_seed(config.seed, "stage.noise"), vocab);

  std::vector<std::vector<std::string>> rows;
  for (const NoiseSweepRow& r : out.rows)
    rows.push_back({format_double(r.eta), format_double(r.metrics.log_mse),
                    format_double(r.metrics.r2),
                    r.metrics.pearson ? format_double(*r.metrics.pearson) : "nan"});
  const std::string header[] = {"eta", "ln_mse", "r2", "pearson"};
  write_csv(config.out_dir + "/noise_sweep.csv", header, rows);

  for (size_t i = 1; i < out.rows.size(); ++i) {
    if (out.rows[i].metrics.r2 > out.rows[i - 1].metrics.r2 + jitter) out.monotone_ok = false;
    if (out.rows[i].metrics.log_mse < out.rows[i - 1].metrics.log_mse - jitter)
      out.monotone_ok = false;
  }
  (void)assert_monotone;  // the caller maps !monotone_ok to its exit status
  finalize_manifest(config, "noise-sweep", {{"noise-sweep", clock.seconds()}});
  return out;
}

SweepKnob parse_sweep_knob(const std::string& name) {
  if (name == "max_term") return SweepKnob::MaxTerm;
  if (name == "max_trig_vars") return SweepKnob::MaxTrigVars;
  if (name == "temperature") return SweepKnob::Temperature;
  if (name == "top_k") return SweepKnob::TopK;
  fail(ErrorCode::ConfigError,
       "unknown sweep knob '" + name +
           "' (expected max_term, max_trig_vars, temperature, or top_k)");
}

const char* sweep_knob_name(SweepKnob knob) {
  switch (knob) {
    case SweepKnob::MaxTerm: return "max_term";
    case SweepKnob::MaxTrigVars: return "max_trig_vars";
    case SweepKnob::Temperature: return "temperature";
    case SweepKnob::TopK: return "top_k";
  }
  return "?";
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config, SweepKnob knob,
                                std::span<const double> values) {
  config.validate();
  if (values.empty()) fail(ErrorCode::ConfigError, "sweep needs at least one value");
  StageClock clock;
  const Vocab vocab = make_vocab(config);
  const PriorModel model = load_checkpoint(config.checkpoint_path(), vocab);
  const TargetData target = load_target(config, vocab);

  std::vector<SweepRow> table;
  for (double value : values) {
    RunConfig cell = config;  // every stage seed stays fixed across cells
    switch (knob) {
      case SweepKnob::MaxTerm: cell.sampler.max_term = static_cast<int>(value); break;
      case SweepKnob::MaxTrigVars: cell.sampler.max_trig_vars = static_cast<int>(value); break;
      case SweepKnob::Temperature: cell.sampler.temperature = value; break;
      case SweepKnob::TopK: cell.sampler.top_k = static_cast<int>(value); break;
    }
    SweepRow row;
    row.value = value;
    try {
      cell.validate();
      const PoolResult pool =
          generate_pool(model, staged_sampler(cell), target.train.input_box, vocab);
      const FitConfig f = staged_fit(cell);
      std::vector<FittedEquation> fitted;
      FittedEquation selected;
      if (!cell.holdout_selection) {
        fitted = fit_pool(pool.survivors, target.train, target.test, f, vocab);
        selected = select_final(fitted, cell.c_max, vocab);
      } else {
        auto [fit_train, validation] = holdout_split(cell, target.train);
        fitted = fit_pool(pool.survivors, fit_train, validation, f, vocab);
        selected = select_final(fitted, cell.c_max, vocab);
        const MetricReport test = scored_on(selected.tmpl, selected.w, target.test, vocab);
        selected.test_mse = test.mse;
        selected.test_log_mse = test.log_mse;
        selected.test_r2 = test.r2;
        selected.test_pearson = test.pearson;
      }
      row.test_r2 = selected.test_r2;
      row.test_pearson = selected.test_pearson;
      row.selected_complexity = selected.complexity_value;
    } catch (const Error& e) {
      row.test_r2 = std::nan("");
      row.status = error_code_name(e.code());
    }
    table.push_back(std::move(row));
  }

  std::vector<std::vector<std::string>> rows;
  for (const SweepRow& r : table)
    rows.push_back({format_double(r.value),
                    std::isfinite(r.test_r2) ? format_double(r.test_r2) : "nan",
                    r.test_pearson ? format_double(*r.test_pearson) : "nan",
                    std::to_string(r.selected_complexity), r.status});
  const std::string header[] = {"value", "test_r2", "test_pearson", "selected_complexity",
                                "status"};
  write_csv(config.out_dir + "/sweep_" + std::string(sweep_knob_name(knob)) + ".csv", header,
            rows);
  finalize_manifest(config, "sweep", {{"sweep", clock.seconds()}});
  return table;
}

namespace {

AblationArm run_arm(const PostfixTemplate& tmpl, const TargetData& target, const FitConfig& f,
                    const Vocab& vocab) {
  AblationArm arm;
  arm.budget = f.hillclimb_budget();
  const FitResult r = fit_template(tmpl, target.train.X, target.train.y, f, vocab);
  arm.evals_used = r.evals_used;
  const EvalResult on_train = evaluate(tmpl, r.w, target.train.X, vocab);
  arm.train_mse = on_train.finite_count() == target.train.n()
                      ? mse(on_train.values, target.train.y)
                      : std::nan("");
  const EvalResult on_test = evaluate(tmpl, r.w, target.test.X, vocab);
  if (on_test.finite_count() == target.test.n()) {
    arm.test_mse = mse(on_test.values, target.test.y);
    arm.test_r2 = r2(on_test.values, target.test.y);
    arm.test_pearson = pearson(on_test.values, target.test.y);
  } else {
    arm.test_mse = std::nan("");
    arm.test_r2 = std::nan("");
  }
  return arm;
}

}  // namespace

AblationOutcome cmd_ablate_coeff(const RunConfig& config, const std::string& template_tokens,
                                 int num_pairs) {
  config.validate();
  if (num_pairs < 1) fail(ErrorCode::ConfigError, "need at least one seed pair");
  StageClock clock;
  const Vocab vocab = make_vocab(config);

  PostfixTemplate tmpl;
  try {
    tmpl.tokens = vocab.tokens_from_string(template_tokens);
    (void)parse_postfix(tmpl.tokens, vocab);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, std::string("invalid ablation template: ") + e.what());
  }
  for (TokenId t : tmpl.tokens)
    if (vocab.is_cof(t)) ++tmpl.num_cof;

  const TargetData target = load_target(config, vocab);

  AblationOutcome out;
  for (int i = 0; i < num_pairs; ++i) {
    AblationPair pair;
    pair.pair_seed = derive_seed(config.seed, "ablate.pair", static_cast<uint64_t>(i));

    FitConfig base = config.fit;
    base.seed = pair.pair_seed;
    // both arms draw on the same evaluation allowance
    base.loss_eval_budget = base.hillclimb_budget();

    FitConfig grad = base;
    grad.optimizer = FitOptimizer::Gradient;
    pair.gradient = run_arm(tmpl, target, grad, vocab);

    FitConfig hc = base;
    hc.optimizer = FitOptimizer::HillClimb;
    pair.hillclimb = run_arm(tmpl, target, hc, vocab);

    if (pair.gradient.budget != pair.hillclimb.budget)
      fail(ErrorCode::ConfigError, "ablation arms ended up with different budgets");
    if (std::isfinite(pair.gradient.train_mse) && std::isfinite(pair.hillclimb.train_mse) &&
        pair.gradient.train_mse < pair.hillclimb.train_mse)
      ++out.gradient_wins;
    out.pairs.push_back(std::move(pair));
  }

  std::vector<std::vector<std::string>> rows;
  for (size_t i = 0; i < out.pairs.size(); ++i) {
    const AblationPair& p = out.pairs[i];
    auto emit = [&](const char* arm_name, const AblationArm& arm) {
      rows.push_back({std::to_string(i), arm_name,
                      std::isfinite(arm.train_mse) ? format_double(arm.train_mse) : "nan",
                      std::isfinite(arm.test_mse) ? format_double(arm.test_mse) : "nan",
                      std::isfinite(arm.test_r2) ? format_double(arm.test_r2) : "nan",
                      arm.test_pearson ? format_double(*arm.test_pearson) : "nan",
                      std::to_string(arm.evals_used), std::to_string(arm.budget)});
    };
    emit("gradient", p.gradient);
    emit("hillclimb", p.hillclimb);
  }
  const std::string header[] = {"pair",    "arm",         "train_mse",  "test_mse",
                                "test_r2", "test_pearson", "evals_used", "budget"};
  write_csv(config.out_dir + "/ablation.csv", header, rows);
  finalize_manifest(config, "ablate-coeff", {{"ablate-coeff", clock.seconds()}});
  return out;
}

std::vector<TimingRow> cmd_timing(const RunConfig& config, int repeats) {
  config.validate();
  if (repeats < 1) fail(ErrorCode::ConfigError, "repeats must be at least 1");
  StageClock clock;
  const Vocab vocab = make_vocab(config);
  const ResultsFile results = read_results_file(config.results_path(), vocab);
  const TargetData target = load_target(config, vocab);

  std::vector<TimingRow> table;
  double sink = 0.0;
  for (const FittedEquation& fe : results.fitted) {
    if (fe.failed) continue;
    std::vector<double> samples;
    samples.reserve(repeats);
    for (int r = 0; r < repeats; ++r) {
      StageClock t;
      const EvalResult ev = evaluate(fe.tmpl, fe.w, target.test.X, vocab);
      samples.push_back(t.seconds());
      for (double v : ev.values)
        if (std::isfinite(v)) sink += v;
    }
    std::sort(samples.begin(), samples.end());
    const size_t mid = samples.size() / 2;
    const double median = samples.size() % 2 ? samples[mid]
                                             : 0.5 * (samples[mid - 1] + samples[mid]);
    table.push_back({vocab.tokens_to_string(fe.tmpl.tokens), fe.complexity_value,
                     target.test.n(), median});
  }
  volatile double keep = sink;  // keep the evaluation work observable
  (void)keep;

  std::vector<std::vector<std::string>> rows;
  for (const TimingRow& r : table)
    rows.push_back({r.tokens, std::to_string(r.complexity), std::to_string(r.test_n),
                    format_double(r.median_seconds)});
  const std::string header[] = {"tokens", "complexity", "test_n", "median_seconds"};
  write_csv(config.out_dir + "/timing.csv", header, rows);
  finalize_manifest(config, "timing", {{"timing", clock.seconds()}});
  return table;
}

// ============================================================================
//  Validation
// ============================================================================

namespace {

bool close_rel(double a, double b, double tol) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

void check(bool ok, const std::string& what, int& checks) {
  if (!ok) fail(ErrorCode::IoError, "validation failed: " + what);
  ++checks;
}

}  // namespace

int cmd_validate(const RunConfig& config) {
  config.validate();
  const Vocab vocab = make_vocab(config);
  int checks = 0;

  std::vector<CorpusEntry> corpus;
  if (fs::exists(config.corpus_path())) {
    corpus = read_corpus_file(config.corpus_path(), vocab);
    for (const CorpusEntry& e : corpus)
      check(check_stack_validity(e.tmpl.tokens, vocab).ok, "corpus template not stack-valid",
            checks);
  }

  std::optional<PriorModel> model;
  if (fs::exists(config.checkpoint_path())) {
    model = load_checkpoint(config.checkpoint_path(), vocab);
    check(model->vocab_size == vocab.size(), "checkpoint vocabulary size", checks);
  }

  if (fs::exists(config.pool_path())) {
    if (!model)
      fail(ErrorCode::IoError,
           "pool validation needs the checkpoint the pool was sampled from");
    const PoolResult pool = read_pool_file(config.pool_path(), vocab);
    const TargetData target = load_target(config, vocab);
    const SamplerConfig s = staged_sampler(config);
    const Matrix probes = semantic_probe_points(
        target.train.input_box, s.semantic_probe_count, derive_seed(s.seed, "sampler.probes"));
    for (const Candidate& c : pool.survivors) {
      check(check_stack_validity(c.tmpl.tokens, vocab).ok, "pool survivor not stack-valid",
            checks);
      check(complexity(c.tmpl) <= s.c_max, "pool survivor exceeds the complexity budget",
            checks);
      int operands = 0, trigs = 0;
      for (TokenId t : c.tmpl.tokens) {
        if (vocab.is_operand(t)) ++operands;
        if (vocab.is_trig(t)) ++trigs;
      }
      check(operands <= s.max_term && trigs <= s.max_trig_vars,
            "pool survivor exceeds the operand/trig budget", checks);
      check(semantic_filter(c.tmpl, probes, vocab), "pool survivor fails the semantic filter",
            checks);
      const double replay = recompute_proxy(*model, s, c.tmpl.tokens, vocab);
      check(close_rel(replay, c.proxy_score, 1e-9), "pool proxy score does not reproduce",
            checks);
    }
  }

  if (fs::exists(config.results_path())) {
    const ResultsFile results = read_results_file(config.results_path(), vocab);
    const TargetData target = load_target(config, vocab);
    Dataset fit_train = target.train;
    Dataset selection = target.test;
    if (config.holdout_selection) {
      auto split = holdout_split(config, target.train);
      fit_train = std::move(split.first);
      selection = std::move(split.second);
    }
    auto verify = [&](const FittedEquation& fe, const Dataset& train_ds,
                      const Dataset& score_ds) {
      const EvalResult on_train = evaluate(fe.tmpl, fe.w, train_ds.X, vocab);
      check(on_train.finite_count() == train_ds.n(), "stored equation non-finite on train",
            checks);
      check(close_rel(mse(on_train.values, train_ds.y), fe.train_mse, 1e-9),
            "train MSE does not recompute", checks);
      const EvalResult on_score = evaluate(fe.tmpl, fe.w, score_ds.X, vocab);
      check(on_score.finite_count() == score_ds.n(), "stored equation non-finite on test",
            checks);
      check(close_rel(mse(on_score.values, score_ds.y), fe.test_mse, 1e-9),
            "test MSE does not recompute", checks);
      check(close_rel(r2(on_score.values, score_ds.y), fe.test_r2, 1e-9),
            "test R^2 does not recompute", checks);
      check(close_rel(log_mse(fe.test_mse), fe.test_log_mse, 1e-9),
            "test log-MSE does not recompute", checks);
    };
    for (const FittedEquation& fe : results.fitted)
      if (!fe.failed) verify(fe, fit_train, selection);
    if (!results.selected.failed)
      verify(results.selected, fit_train, config.holdout_selection ? target.test : selection);
  }

  if (fs::exists(config.manifest_path())) {
    const json manifest = json::parse(read_file(config.manifest_path()), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object())
      fail(ErrorCode::IoError, "manifest is not a structured-text object");
    for (const auto& entry : manifest.value("artifacts", json::array())) {
      const std::string file = entry.value("file", "");
      const std::string full = config.out_dir + "/" + file;
      check(fs::exists(full), "manifest references missing file " + file, checks);
      check(hex64(file_checksum(full)) == entry.value("checksum", ""),
            "manifest checksum stale for " + file, checks);
    }
  }

  if (checks == 0) fail(ErrorCode::IoError, "no artifacts found to validate");
  return checks;
}

}  // namespace srco
