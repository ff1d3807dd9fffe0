#include <doctest.h>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "srco/metrics.hpp"

using namespace srco;

namespace {

// Naive-loop references, written independently of the library: two-pass
// formulas straight from the definitions.
double ref_mse(const std::vector<double>& p, const std::vector<double>& t) {
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  return acc / p.size();
}

double ref_r2(const std::vector<double>& p, const std::vector<double>& t) {
  double tbar = 0.0;
  for (double v : t) tbar += v;
  tbar /= t.size();
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    num += (t[i] - p[i]) * (t[i] - p[i]);
    den += (t[i] - tbar) * (t[i] - tbar);
  }
  return 1.0 - num / den;
}

std::optional<double> ref_pearson(const std::vector<double>& p, const std::vector<double>& t) {
  double pbar = 0.0, tbar = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    pbar += p[i];
    tbar += t[i];
  }
  pbar /= p.size();
  tbar /= t.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    sxy += (p[i] - pbar) * (t[i] - tbar);
    sxx += (p[i] - pbar) * (p[i] - pbar);
    syy += (t[i] - tbar) * (t[i] - tbar);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("random vectors agree with naive references to 1e-12") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> len(2, 60);
  for (int trial = 0; trial < 200; ++trial) {  // the 1000-pair sweep runs in acceptance
    const int n = len(rng);
    std::vector<double> p(n), t(n);
    for (int i = 0; i < n; ++i) {
      p[i] = u(rng);
      t[i] = u(rng);
    }
    CHECK(rel_close(mse(p, t), ref_mse(p, t), 1e-12));
    CHECK(rel_close(r2(p, t), ref_r2(p, t), 1e-12));
    const auto lib = pearson(p, t);
    const auto ref = ref_pearson(p, t);
    REQUIRE(lib.has_value() == ref.has_value());
    if (lib) CHECK(rel_close(*lib, *ref, 1e-12));
  }
}

TEST_CASE("hand case pred=[0,1] target=[1,0]") {
  const std::vector<double> p = {0.0, 1.0};
  const std::vector<double> t = {1.0, 0.0};
  CHECK(mse(p, t) == 1.0);
  CHECK(r2(p, t) == -3.0);
  // sqrt(vp)*sqrt(vt) rounds one ulp away from 0.5, so allow that ulp
  CHECK(*pearson(p, t) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("log_mse floors at 1e-300 and rejects negatives") {
  CHECK(log_mse(0.0) == std::log(1e-300));
  CHECK(log_mse(1e-305) == std::log(1e-300));
  CHECK(log_mse(2.0) == std::log(2.0));
  CHECK_THROWS_AS((void)log_mse(-1e-9), Error);
}

TEST_CASE("degenerate inputs raise typed errors") {
  const std::vector<double> a = {1.0, 2.0};
  const std::vector<double> b = {1.0};
  CHECK_THROWS_AS((void)mse(a, b), Error);
  CHECK_THROWS_AS((void)mse(std::vector<double>{}, std::vector<double>{}), Error);
  CHECK_THROWS_AS((void)r2(a, std::vector<double>{3.0, 3.0}), Error);  // constant target
  const std::vector<double> nf = {1.0, std::nan("")};
  CHECK_THROWS_AS((void)mse(nf, a), Error);
  CHECK_FALSE(pearson(std::vector<double>{2.0, 2.0}, a).has_value());
}

TEST_CASE("compute_metrics bundles all four values") {
  const std::vector<double> p = {1.0, 2.0, 3.5};
  const std::vector<double> t = {1.1, 1.9, 3.4};
  const MetricReport rep = compute_metrics(p, t);
  CHECK(rep.n == 3);
  CHECK(rep.mse == doctest::Approx(ref_mse(p, t)).epsilon(1e-15));
  CHECK(rep.log_mse == doctest::Approx(std::log(rep.mse)).epsilon(1e-15));
  CHECK(rep.r2 == doctest::Approx(ref_r2(p, t)).epsilon(1e-15));
  REQUIRE(rep.pearson.has_value());
  CHECK(*rep.pearson == doctest::Approx(*ref_pearson(p, t)).epsilon(1e-15));
}

}  // TEST_SUITE
