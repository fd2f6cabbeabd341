#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "sslab/error.hpp"

namespace sslab {

/// Sample Pearson correlation, two-pass (means first, then centered sums).
inline double pearson(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) {
    throw Error(ErrorKind::LengthMismatch,
                std::to_string(y.size()) + " vs " + std::to_string(yhat.size()));
  }
  if (y.size() < 2) throw Error(ErrorKind::LengthMismatch, "pearson needs at least 2 points");
  // exact check: a rounded mean would leave tiny nonzero deviations
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
  };
  if (constant(y) || constant(yhat)) throw Error(ErrorKind::ZeroVariance, "constant input");
  const double n = static_cast<double>(y.size());
  double my = 0.0, mh = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    my += y[i];
    mh += yhat[i];
  }
  my /= n;
  mh /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dy = y[i] - my;
    const double dh = yhat[i] - mh;
    sxy += dy * dh;
    sxx += dy * dy;
    syy += dh * dh;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::ZeroVariance, "constant input");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

/// Mean squared error.
inline double mean_squared_error(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw Error(ErrorKind::LengthMismatch, "mse");
  if (y.empty()) return 0.0;
  long double s = 0.0L;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = yhat[i] - y[i];
    s += static_cast<long double>(e * e);
  }
  return static_cast<double>(s / static_cast<long double>(y.size()));
}

}  // namespace sslab
