#ifndef SRCO_METRICS_HPP_
#define SRCO_METRICS_HPP_

#include <optional>
#include <span>

#include "srco/common.hpp"

namespace srco {

// Floor applied inside log_mse so a perfect fit reports ln(1e-300) instead of -inf.
inline constexpr double kLogMseFloor = 1e-300;

struct MetricReport {
  double mse = 0.0;
  double log_mse = 0.0;                 // natural log, floored
  double r2 = 0.0;
  std::optional<double> pearson;        // empty when either side has zero variance
  int n = 0;
};

double mse(std::span<const double> pred, std::span<const double> target);

// 1 - SS_res/SS_tot; may be negative. Throws ZeroTargetVariance.
double r2(std::span<const double> pred, std::span<const double> target);

// Sample Pearson correlation; nullopt when either side is constant.
std::optional<double> pearson(std::span<const double> pred, std::span<const double> target);

// ln(max(v, 1e-300)). Throws NegativeInput.
double log_mse(double mse_value);

MetricReport compute_metrics(std::span<const double> pred, std::span<const double> target);

}  // namespace srco

#endif  // SRCO_METRICS_HPP_
