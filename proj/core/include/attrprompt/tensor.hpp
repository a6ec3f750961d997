#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace attrprompt {

// Dense row-major array of rank 0..3 holding 64-bit reals.
//
// Rank-2 tensors are the working currency of the model code; rank-1 tensors
// are used for standalone vectors and rank-3 for stacks of images.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-1 tensors behave as a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Tensor reshaped(std::vector<std::size_t> shape) const;
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Threshold below which a vector is considered to have no direction.
inline constexpr double kNormEpsilon = 1e-12;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row-wise softmax of logits / temperature with max subtraction.
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// Unit vector in the direction of v; throws kDegenerateVector when
// ||v|| <= kNormEpsilon.
Tensor l2_normalize(const Tensor& v);
Tensor l2_normalize_rows(const Tensor& m);

// softmax(Q K^T / sqrt(d_K)) V. Projections are applied by callers.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);
// The row-stochastic attention weights used by scaled_dot_attention.
Tensor attention_weights(const Tensor& q, const Tensor& k);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace attrprompt
