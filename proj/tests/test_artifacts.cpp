#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "srco/artifacts.hpp"
#include "test_util.hpp"

using namespace srco;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

PostfixTemplate make_template(const Vocab& v, const char* s) {
  PostfixTemplate t;
  t.tokens = v.tokens_from_string(s);
  for (TokenId tok : t.tokens)
    if (v.is_cof(tok)) ++t.num_cof;
  return t;
}

}  // namespace

TEST_SUITE("artifacts") {

TEST_CASE("corpus file: round-trip, byte stability, validation") {
  Vocab v(2);
  std::vector<CorpusEntry> corpus = {
      {make_template(v, "COF x0 mul"), "alpha", 0.875},
      {make_template(v, "x0 x1 add sin"), "alpha", 0.5},
      {make_template(v, "COF"), "beta", 1.0 / 3.0},  // needs full precision
  };
  const std::string path = temp_file("srco_test_corpus.jsonl");
  write_corpus_file(path, corpus, v);
  const std::string bytes1 = read_file(path);

  const auto back = read_corpus_file(path, v);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].tmpl.tokens == corpus[i].tmpl.tokens);
    CHECK(back[i].tmpl.num_cof == corpus[i].tmpl.num_cof);
    CHECK(back[i].source_dataset == corpus[i].source_dataset);
    CHECK(back[i].train_r2 == corpus[i].train_r2);  // bitwise through the text
  }

  // write(read(x)) == x byte-for-byte
  write_corpus_file(path, back, v);
  CHECK(read_file(path) == bytes1);

  // wrong vocabulary is rejected up front
  Vocab v3(3);
  try {
    (void)read_corpus_file(path, v3);
    FAIL("expected VocabMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::VocabMismatch);
  }

  // corrupt line
  atomic_write_file(path, bytes1.substr(0, bytes1.size() - 8));
  CHECK_THROWS_AS((void)read_corpus_file(path, v), Error);

  // invalid template inside an otherwise well-formed file
  std::string tampered = bytes1;
  const size_t at = tampered.find("COF x0 mul");
  REQUIRE(at != std::string::npos);
  tampered.replace(at, 10, "mul x0 COF");
  atomic_write_file(path, tampered);
  CHECK_THROWS_AS((void)read_corpus_file(path, v), Error);

  std::filesystem::remove(path);
}

TEST_CASE("pool file: stats trailer and non-finite handling") {
  Vocab v(2);
  PoolResult pool;
  Candidate a;
  a.tmpl = make_template(v, "COF x0 mul");
  a.proxy_score = -1.25;
  Candidate b;
  b.tmpl = make_template(v, "x1 cos");
  b.proxy_score = -2.5;
  pool.survivors = {a, b};
  pool.stats = {10, 1, 2, 3, 0, 1, 1, 2};

  const std::string path = temp_file("srco_test_pool.jsonl");
  write_pool_file(path, pool, v);
  const std::string bytes1 = read_file(path);

  const PoolResult back = read_pool_file(path, v);
  REQUIRE(back.survivors.size() == 2);
  CHECK(back.survivors[0].tmpl.tokens == a.tmpl.tokens);
  CHECK(back.survivors[0].proxy_score == a.proxy_score);
  CHECK(back.stats.sampled == 10);
  CHECK(back.stats.syntax_rejected == 1);
  CHECK(back.stats.semantic_rejected == 2);
  CHECK(back.stats.complexity_rejected == 3);
  CHECK(back.stats.budget_rejected == 0);
  CHECK(back.stats.overlength_rejected == 1);
  CHECK(back.stats.duplicates_merged == 1);
  CHECK(back.stats.survivors == 2);

  write_pool_file(path, back, v);
  CHECK(read_file(path) == bytes1);
  std::filesystem::remove(path);
}

TEST_CASE("results file: per-candidate records, selected trailer, null for non-finite") {
  Vocab v(2);
  FittedEquation good;
  good.tmpl = make_template(v, "COF x0 mul");
  good.w = {2.5};
  good.proxy_score = -3.5;
  good.train_loss = 1e-12;
  good.train_mse = 1e-12;
  good.test_mse = 2e-12;
  good.test_log_mse = std::log(2e-12);
  good.test_r2 = 0.99875;
  good.test_pearson = 0.9999;
  good.complexity_value = 3;
  good.fit_evals = 1234;

  FittedEquation bad;
  bad.tmpl = make_template(v, "x0 x0 sub x0 x0 sub div");
  bad.complexity_value = 7;
  bad.failed = true;
  bad.failure = "AllSamplesNonFinite: no finite training predictions";
  bad.test_mse = std::numeric_limits<double>::quiet_NaN();
  bad.test_log_mse = std::numeric_limits<double>::quiet_NaN();
  bad.test_r2 = -std::numeric_limits<double>::infinity();
  bad.test_pearson = std::nullopt;

  const std::string path = temp_file("srco_test_results.jsonl");
  write_results_file(path, std::vector<FittedEquation>{good, bad}, good, 12, v);
  const std::string bytes1 = read_file(path);
  CHECK(bytes1.find("null") != std::string::npos);  // NaN/inf must not leak

  const ResultsFile back = read_results_file(path, v);
  REQUIRE(back.fitted.size() == 2);
  CHECK(back.c_max == 12);
  CHECK(back.fitted[0].w == good.w);
  CHECK(back.fitted[0].test_r2 == good.test_r2);
  CHECK(back.fitted[0].test_pearson == good.test_pearson);
  CHECK(back.fitted[0].fit_evals == 1234);
  CHECK(!back.fitted[0].failed);
  CHECK(back.fitted[1].failed);
  CHECK(back.fitted[1].failure == bad.failure);
  CHECK(std::isnan(back.fitted[1].test_mse));
  CHECK(!back.fitted[1].test_pearson.has_value());
  CHECK(back.selected.tmpl.tokens == good.tmpl.tokens);
  CHECK(back.selected.w == good.w);

  write_results_file(path, back.fitted, back.selected, back.c_max, v);
  CHECK(read_file(path) == bytes1);
  std::filesystem::remove(path);
}

TEST_CASE("loss csv has one row per epoch") {
  TrainResult res;
  res.init_train_ce = 3.0;
  res.init_heldout_ce = 3.1;
  res.history = {{1, 2.5, 2.6}, {2, 2.0, std::numeric_limits<double>::quiet_NaN()}};
  const std::string path = temp_file("srco_test_loss.csv");
  write_loss_csv(path, res);
  const std::string text = read_file(path);
  const auto first_nl = text.find('\n');
  CHECK(text.substr(0, first_nl) == "epoch,train_ce,heldout_ce");
  int rows = 0;
  for (char c : text)
    if (c == '\n') ++rows;
  CHECK(rows == 3);  // header + 2 epochs
  CHECK(text.find("nan") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("benchmark specs round-trip") {
  const auto specs = desk_benchmarks();
  const std::string path = temp_file("srco_test_specs.jsonl");
  write_benchmark_specs(path, specs);
  const auto back = read_benchmark_specs(path);
  REQUIRE(back.size() == specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    CHECK(back[i].name == specs[i].name);
    CHECK(back[i].tier == specs[i].tier);
    CHECK(back[i].d == specs[i].d);
    CHECK(back[i].expression == specs[i].expression);
    CHECK(back[i].input_box == specs[i].input_box);
    CHECK(back[i].seed == specs[i].seed);
  }
  std::filesystem::remove(path);
}

TEST_CASE("generic csv writer escapes nothing it does not need to") {
  const std::string path = temp_file("srco_test_table.csv");
  write_csv(path, std::vector<std::string>{"a", "b"},
            {{"1", "2"}, {"0.5", "x"}});
  CHECK(read_file(path) == "a,b\n1,2\n0.5,x\n");
  std::filesystem::remove(path);
}

}  // TEST_SUITE
