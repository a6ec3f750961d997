#include "attrprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "attrprompt/error.hpp"

namespace attrprompt {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
  require(t.rank() == 1 || t.rank() == 2, ErrorKind::kInvalidArgument,
          std::string(what) + ": expected a rank-1 or rank-2 tensor");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  require(shape_.size() <= 3, ErrorKind::kInvalidArgument, "tensor rank must be <= 3");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_.size() <= 3, ErrorKind::kInvalidArgument, "tensor rank must be <= 3");
  require(element_count(shape_) == data_.size(), ErrorKind::kInvalidArgument,
          "tensor data length does not match shape");
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorKind::kInvalidArgument, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  return shape_[0] * shape_[1];
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, ErrorKind::kInvalidArgument,
          "matmul: inner dimensions disagree (" + std::to_string(k) + " vs " +
              std::to_string(b.rows()) + ")");
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      if (aip == 0.0) continue;
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
  require(temperature > 0.0, ErrorKind::kInvalidArgument,
          "softmax temperature must be positive");
  require_matrix(logits, "softmax_rows");
  Tensor out = Tensor::matrix(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : in) mx = std::max(mx, x / temperature);
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] / temperature - mx);
      sum += o[j];
    }
    for (double& x : o) x /= sum;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kInvalidArgument, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Tensor l2_normalize(const Tensor& v) {
  const double n = l2_norm(v.data());
  require(n > kNormEpsilon, ErrorKind::kDegenerateVector,
          "cannot normalize a vector with norm " + std::to_string(n));
  Tensor out = v;
  for (double& x : out.data()) x /= n;
  return out;
}

Tensor l2_normalize_rows(const Tensor& m) {
  require_matrix(m, "l2_normalize_rows");
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    const double n = l2_norm(row);
    require(n > kNormEpsilon, ErrorKind::kDegenerateVector,
            "row " + std::to_string(r) + " has near-zero norm");
    for (double& x : row) x /= n;
  }
  return out;
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  require(q.cols() == k.cols(), ErrorKind::kInvalidArgument,
          "attention: query and key widths differ");
  require(k.rows() >= 1, ErrorKind::kInvalidArgument, "attention: no keys");
  Tensor logits = matmul(q, transpose(k));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (double& x : logits.data()) x *= scale;
  return softmax_rows(logits);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require(k.rows() == v.rows(), ErrorKind::kInvalidArgument,
          "attention: key and value counts differ");
  return matmul(attention_weights(q, k), v);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), ErrorKind::kInvalidArgument, "max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace attrprompt
