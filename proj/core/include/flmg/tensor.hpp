#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flmg {

/// Dense row-major array of 64-bit reals with an optional gradient buffer.
/// Construction from external data rejects NaN/Inf; internal math paths are
/// expected to stay finite and are checked by the test suite instead.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), values_(count(shape_), 0.0) {}

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t;
    if (count(shape) != values.size()) {
      throw std::invalid_argument("Tensor: shape/value count mismatch (" +
                                  std::to_string(count(shape)) + " vs " +
                                  std::to_string(values.size()) + ")");
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw std::invalid_argument("Tensor: non-finite value rejected");
    }
    t.shape_ = std::move(shape);
    t.values_ = std::move(values);
    return t;
  }

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t ndim() const { return shape_.size(); }

  std::size_t rows() const {
    require_2d();
    return shape_[0];
  }
  std::size_t cols() const {
    require_2d();
    return shape_[1];
  }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }

  std::span<double> row(std::size_t r) {
    require_2d();
    return std::span<double>(values_.data() + r * shape_[1], shape_[1]);
  }
  std::span<const double> row(std::size_t r) const {
    require_2d();
    return std::span<const double>(values_.data() + r * shape_[1], shape_[1]);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Optional gradient buffer, always the same shape as the values.
  bool has_grad() const { return grad_.has_value(); }
  std::span<double> grad() {
    if (!grad_) grad_.emplace(values_.size(), 0.0);
    return *grad_;
  }
  std::span<const double> grad() const {
    if (!grad_) throw std::logic_error("Tensor: gradient buffer not allocated");
    return *grad_;
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_2d() const {
    if (shape_.size() != 2) throw std::logic_error("Tensor: 2-D access on non-matrix");
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

}  // namespace flmg
