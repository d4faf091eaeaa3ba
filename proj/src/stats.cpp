#include "shelab/stats.hpp"

#include <algorithm>
#include <cmath>

#include "shelab/error.hpp"

namespace shelab::stats {

MeanEstimate mean_estimate(std::span<const double> values) {
  MeanEstimate est;
  est.count = values.size();
  if (values.empty()) return est;
  double sum = 0.0;
  for (double v : values) sum += v;
  est.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return est;
  double ss = 0.0;
  for (double v : values) ss += (v - est.mean) * (v - est.mean);
  const double n = static_cast<double>(values.size());
  est.standard_error = std::sqrt(ss / (n - 1.0) / n);
  return est;
}

double fraction_standard_error(double fraction, std::size_t count) {
  if (count == 0) return 0.0;
  return std::sqrt(fraction * (1.0 - fraction) / static_cast<double>(count));
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2,
          "fit_line needs at least two (x, y) pairs of equal length");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0.0, "fit_line needs at least two distinct x values");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    rss += r * r;
  }
  fit.rms_residual = std::sqrt(rss / n);
  return fit;
}

LineFit fit_power_law(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0))
      fail(ErrorCode::numerical, "power-law fit requires positive abscissae");
    lx[i] = std::log(x[i]);
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0))
      fail(ErrorCode::numerical, "power-law fit requires positive values");
    ly[i] = std::log(y[i]);
  }
  return fit_line(lx, ly);
}

double median_of_means(std::span<const double> values, std::size_t batches) {
  require(batches >= 1 && values.size() >= batches,
          "median_of_means needs at least one value per batch");
  const std::size_t per = values.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) s += values[i];
    means[b] = s / static_cast<double>(per);
  }
  std::sort(means.begin(), means.end());
  if (batches % 2 == 1) return means[batches / 2];
  return 0.5 * (means[batches / 2 - 1] + means[batches / 2]);
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  require(lo > 0.0 && hi > lo && count >= 2, "log_spaced needs 0 < lo < hi");
  std::vector<double> out(count);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) /
                              static_cast<double>(count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

}  // namespace shelab::stats
