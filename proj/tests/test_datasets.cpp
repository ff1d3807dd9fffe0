#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

#include "srco/dataset.hpp"
#include "srco/eval.hpp"
#include "srco/expr.hpp"
#include "srco/metrics.hpp"

using namespace srco;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("desk benchmark suite shape") {
  const auto specs = desk_benchmarks();
  REQUIRE(specs.size() == 9);
  int easy = 0, medium = 0, hard = 0;
  for (const auto& s : specs) {
    if (s.tier == "easy") {
      ++easy;
      CHECK(s.d == 2);
    } else if (s.tier == "medium") {
      ++medium;
      CHECK(s.d == 3);
    } else if (s.tier == "hard") {
      ++hard;
      CHECK(s.d == 4);
    }
    CHECK(s.train_n == 200);
    CHECK(s.test_n == 200);
    REQUIRE(s.input_box.size() == static_cast<size_t>(s.d));
    for (auto [lo, hi] : s.input_box) {
      CHECK(lo == 1.0);
      CHECK(hi == 5.0);
    }
    // ground truth must parse over a d-variable alphabet
    Vocab v(s.d);
    CHECK_NOTHROW((void)parse_postfix_with_constants(s.expression, v));
  }
  CHECK(easy == 3);
  CHECK(medium == 3);
  CHECK(hard == 3);
  CHECK(find_desk_benchmark("easy_linsin").name == "easy_linsin");
  CHECK_THROWS_AS((void)find_desk_benchmark("nope"), Error);
}

TEST_CASE("synthetic generation: ranges, determinism, disjoint splits") {
  BenchmarkSpec spec = find_desk_benchmark("easy_linsin");
  spec.seed = 17;
  Vocab v(2);
  const auto [train, test] = generate_synthetic(spec, v);
  CHECK(train.n() == 200);
  CHECK(test.n() == 200);
  CHECK(train.d() == 2);
  CHECK(train.split == "train");
  CHECK(test.split == "test");

  // interval bound for 2.5*x0 + sin(1.3*x1) over [1,5]^2
  for (const Dataset* ds : {&train, &test})
    for (int i = 0; i < ds->n(); ++i) {
      CHECK(std::isfinite(ds->y[i]));
      CHECK(ds->y[i] >= 2.5 - 1.0);
      CHECK(ds->y[i] <= 12.5 + 1.0);
      for (int j = 0; j < ds->d(); ++j) {
        CHECK(ds->X(i, j) >= 1.0);
        CHECK(ds->X(i, j) <= 5.0);
      }
    }

  // same seed twice: identical; train/test streams never share a row
  const auto [train2, test2] = generate_synthetic(spec, v);
  CHECK(train2.X.a == train.X.a);
  CHECK(test2.y == test.y);
  std::set<std::pair<double, double>> train_rows;
  for (int i = 0; i < train.n(); ++i) train_rows.insert({train.X(i, 0), train.X(i, 1)});
  for (int i = 0; i < test.n(); ++i)
    CHECK(train_rows.count({test.X(i, 0), test.X(i, 1)}) == 0);

  spec.seed = 18;
  const auto [train3, _] = generate_synthetic(spec, v);
  CHECK(train3.X.a != train.X.a);
}

TEST_CASE("constant ground truth yields constant targets") {
  BenchmarkSpec spec;
  spec.name = "const";
  spec.tier = "easy";
  spec.d = 2;
  spec.expression = "4.25";
  spec.input_box = {{1.0, 5.0}, {1.0, 5.0}};
  spec.train_n = 10;
  spec.test_n = 10;
  Vocab v(2);
  const auto [train, test] = generate_synthetic(spec, v);
  for (double yi : train.y) CHECK(yi == 4.25);
  for (double yi : test.y) CHECK(yi == 4.25);
}

TEST_CASE("non-finite ground truth rejects the spec") {
  BenchmarkSpec spec;
  spec.name = "blowup";
  spec.tier = "easy";
  spec.d = 2;
  spec.expression = "x0 x1 x1 sub div";  // x0 / (x1 - x1)
  spec.input_box = {{1.0, 5.0}, {1.0, 5.0}};
  Vocab v(2);
  CHECK_THROWS_AS((void)generate_synthetic(spec, v), Error);
}

TEST_CASE("csv round-trip preserves full precision") {
  BenchmarkSpec spec = find_desk_benchmark("easy_mulcos");
  spec.seed = 5;
  Vocab v(2);
  const auto [train, _] = generate_synthetic(spec, v);
  const std::string path = temp_path("srco_test_roundtrip.csv");
  save_csv(train, "y", path);
  const Dataset back = load_csv(path, "y");
  CHECK(back.n() == train.n());
  CHECK(back.d() == train.d());
  CHECK(back.feature_names == train.feature_names);
  CHECK(back.X.a == train.X.a);
  CHECK(back.y == train.y);
  std::filesystem::remove(path);
}

TEST_CASE("csv loader rejects malformed input with typed errors") {
  const std::string path = temp_path("srco_test_bad.csv");
  atomic_write_file(path, "a,b,y\n1,2,3\n4,,6\n");
  CHECK_THROWS_AS((void)load_csv(path, "y"), Error);  // blank cell
  atomic_write_file(path, "a,b,y\n1,2,3\n");
  CHECK_THROWS_AS((void)load_csv(path, "target"), Error);  // missing target
  atomic_write_file(path, "");
  CHECK_THROWS_AS((void)load_csv(path, "y"), Error);  // empty file
  atomic_write_file(path, "a,b,y\n1,2,3\n");
  const Dataset ds = load_csv(path, "y");
  CHECK(ds.d() == 2);
  CHECK(ds.y == std::vector<double>{3.0});
  std::filesystem::remove(path);
}

TEST_CASE("perturbation: eta=0 identity, targets fixed, train-split sigma") {
  BenchmarkSpec spec = find_desk_benchmark("easy_linsin");
  spec.seed = 23;
  Vocab v(2);
  const auto [train, test] = generate_synthetic(spec, v);

  const Dataset same = perturb_features(test, train, 0.0, 777);
  CHECK(same.X.a == test.X.a);  // bitwise identity
  CHECK(same.y == test.y);

  PerturbInfo info;
  const Dataset noisy = perturb_features(test, train, 0.4, 777, &info);
  CHECK(noisy.y == test.y);
  CHECK(noisy.X.a != test.X.a);
  REQUIRE(info.sigma.size() == 2);

  // sigma must be the train split's sample standard deviation (N-1)
  for (int j = 0; j < 2; ++j) {
    double m = 0.0;
    for (int i = 0; i < train.n(); ++i) m += train.X(i, j);
    m /= train.n();
    double ss = 0.0;
    for (int i = 0; i < train.n(); ++i) ss += (train.X(i, j) - m) * (train.X(i, j) - m);
    const double expected = std::sqrt(ss / (train.n() - 1));
    CHECK(info.sigma[j] == doctest::Approx(expected).epsilon(1e-12));
  }

  // determinism, and independence from the test split's own statistics
  const Dataset noisy2 = perturb_features(test, train, 0.4, 777);
  CHECK(noisy2.X.a == noisy.X.a);

  // empirical std of the injected noise ~ eta*sigma_j within 2% at large N
  Dataset big = test;
  const int big_n = 100000;
  big.X = Matrix(big_n, 2);
  big.y.assign(big_n, 0.0);
  for (int i = 0; i < big_n; ++i)
    for (int j = 0; j < 2; ++j) big.X(i, j) = 3.0;
  const Dataset bign = perturb_features(big, train, 0.5, 42);
  for (int j = 0; j < 2; ++j) {
    double m = 0.0;
    for (int i = 0; i < big_n; ++i) m += bign.X(i, j) - 3.0;
    m /= big_n;
    double ss = 0.0;
    for (int i = 0; i < big_n; ++i) {
      const double d = (bign.X(i, j) - 3.0) - m;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / (big_n - 1));
    CHECK(sd == doctest::Approx(0.5 * info.sigma[j]).epsilon(0.02));
  }
}

TEST_CASE("degenerate features stay unperturbed") {
  Dataset train;
  train.name = "degen";
  train.split = "train";
  train.X = Matrix(5, 2);
  for (int i = 0; i < 5; ++i) {
    train.X(i, 0) = 2.0;           // constant feature
    train.X(i, 1) = 1.0 + i;
  }
  train.y.assign(5, 0.0);
  Dataset test = train;
  test.split = "test";
  PerturbInfo info;
  const Dataset noisy = perturb_features(test, train, 0.8, 9, &info);
  REQUIRE(info.degenerate_features == std::vector<int>{0});
  for (int i = 0; i < 5; ++i) CHECK(noisy.X(i, 0) == 2.0);
}

TEST_CASE("noise sweep: row count and exact eta=0 metrics") {
  BenchmarkSpec spec = find_desk_benchmark("easy_linsin");
  spec.seed = 31;
  Vocab v(2);
  const auto [train, test] = generate_synthetic(spec, v);
  const PostfixTemplate tmpl{v.tokens_from_string("COF x0 mul COF x1 mul sin add"), 2};
  const std::vector<double> w = {2.5, 1.3};
  const std::vector<double> etas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const auto rows = noise_sweep(tmpl, w, train, test, etas, 100, v);
  REQUIRE(rows.size() == 11);
  for (size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].eta == etas[i]);

  // eta=0 row equals the clean metrics exactly (same arithmetic)
  const EvalResult clean = evaluate(tmpl, w, test.X, v);
  const MetricReport ref = compute_metrics(clean.values, test.y);
  CHECK(rows[0].metrics.mse == ref.mse);
  CHECK(rows[0].metrics.r2 == ref.r2);
  CHECK(rows[0].metrics.log_mse == ref.log_mse);

  // exact coefficients: clean fit is perfect, noise makes it strictly worse
  CHECK(rows[0].metrics.mse <= 1e-20);
  CHECK(rows[5].metrics.mse > rows[0].metrics.mse);
}

}  // TEST_SUITE
