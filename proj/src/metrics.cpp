#include "srco/metrics.hpp"

#include <cmath>

namespace srco {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size())
    fail(ErrorCode::LengthMismatch,
         std::to_string(pred.size()) + " vs " + std::to_string(target.size()));
  if (pred.empty()) fail(ErrorCode::LengthMismatch, "empty vectors");
  for (double v : pred)
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "non-finite prediction");
  for (double v : target)
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "non-finite target");
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target);
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double e = pred[i] - target[i];
    s += e * e;
  }
  return s / static_cast<double>(pred.size());
}

double r2(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target);
  double ybar = mean(target);
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double e = pred[i] - target[i];
    double d = target[i] - ybar;
    ss_res += e * e;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) fail(ErrorCode::ZeroTargetVariance, "constant target");
  return 1.0 - ss_res / ss_tot;
}

std::optional<double> pearson(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target);
  double pbar = mean(pred), tbar = mean(target);
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double dp = pred[i] - pbar;
    double dt = target[i] - tbar;
    cov += dp * dt;
    vp += dp * dp;
    vt += dt * dt;
  }
  if (vp == 0.0 || vt == 0.0) return std::nullopt;
  return cov / (std::sqrt(vp) * std::sqrt(vt));
}

double log_mse(double mse_value) {
  if (mse_value < 0.0) fail(ErrorCode::NegativeInput, "mse must be >= 0");
  return std::log(std::max(mse_value, kLogMseFloor));
}

MetricReport compute_metrics(std::span<const double> pred, std::span<const double> target) {
  MetricReport rep;
  rep.n = static_cast<int>(pred.size());
  rep.mse = mse(pred, target);
  rep.log_mse = log_mse(rep.mse);
  rep.r2 = r2(pred, target);
  rep.pearson = pearson(pred, target);
  return rep;
}

}  // namespace srco
