#ifndef KSEG_STATS_HPP
#define KSEG_STATS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace kseg {

// Quantile with linear interpolation between closest ranks; input must be
// sorted ascending. q in [0,1].
template <class Scalar>
double quantile_sorted(const std::vector<Scalar>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  if (q <= 0.0) return static_cast<double>(sorted.front());
  if (q >= 1.0) return static_cast<double>(sorted.back());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  const double a = static_cast<double>(sorted[lo]);
  if (frac == 0.0) return a;
  return a + frac * (static_cast<double>(sorted[lo + 1]) - a);
}

template <class Scalar>
double quantile(std::vector<Scalar> values, double q) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

template <class Scalar>
double median(std::vector<Scalar> values) {
  return quantile(std::move(values), 0.5);
}

}  // namespace kseg

#endif  // KSEG_STATS_HPP
