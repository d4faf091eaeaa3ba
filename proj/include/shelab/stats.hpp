#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace shelab::stats {

struct MeanEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t count = 0;
};

/// Sample mean with the standard error of the mean (n-1 variance).
MeanEstimate mean_estimate(std::span<const double> values);

/// Standard error of a Bernoulli fraction estimated from `count` trials.
double fraction_standard_error(double fraction, std::size_t count);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Least squares fit of log(y) against log(x). All inputs must be positive.
LineFit fit_power_law(std::span<const double> x, std::span<const double> y);

/// Median of the means of `batches` contiguous batches.
double median_of_means(std::span<const double> values, std::size_t batches);

std::vector<double> log_spaced(double lo, double hi, std::size_t count);

}  // namespace shelab::stats
