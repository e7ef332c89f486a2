#include "flmg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace flmg::analysis {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_pair(const Tensor& a, const Tensor& b) {
  a.require_2d();
  b.require_2d();
  if (a.cols() != b.cols()) throw std::invalid_argument("row dimension mismatch");
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("empty sample set");
}

}  // namespace

double median_sq_distance(const Tensor& x) {
  x.require_2d();
  const std::size_t n = x.rows();
  if (n < 2) throw std::invalid_argument("need >= 2 rows for a median distance");
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d.push_back(sq_dist(x.row(i), x.row(j)));
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

double rbf_mmd2(const Tensor& a, const Tensor& b, double bandwidth_sq) {
  check_pair(a, b);
  double h = bandwidth_sq;
  if (h <= 0.0) h = median_sq_distance(b);
  if (h <= 0.0) throw std::invalid_argument("degenerate kernel bandwidth");
  auto mean_kernel = [h](const Tensor& u, const Tensor& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i)
      for (std::size_t j = 0; j < v.rows(); ++j)
        s += std::exp(-sq_dist(u.row(i), v.row(j)) / h);
    return s / (static_cast<double>(u.rows()) * static_cast<double>(v.rows()));
  };
  return mean_kernel(a, a) + mean_kernel(b, b) - 2.0 * mean_kernel(a, b);
}

double mean_nn_distance(const Tensor& a, const Tensor& b) {
  check_pair(a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.rows(); ++j) best = std::min(best, sq_dist(a.row(i), b.row(j)));
    total += std::sqrt(best);
  }
  return total / static_cast<double>(a.rows());
}

double mean_intra_class_nn_distance(const Tensor& x, std::span<const int> labels) {
  x.require_2d();
  if (x.rows() != labels.size()) throw std::invalid_argument("label count mismatch");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.rows(); ++j) {
      if (j == i || labels[j] != labels[i]) continue;
      best = std::min(best, sq_dist(x.row(i), x.row(j)));
    }
    if (std::isfinite(best)) {
      total += std::sqrt(best);
      ++counted;
    }
  }
  if (counted == 0) throw std::invalid_argument("no same-label pairs");
  return total / static_cast<double>(counted);
}

}  // namespace flmg::analysis
