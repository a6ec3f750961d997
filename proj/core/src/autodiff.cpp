#include "attrprompt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "attrprompt/error.hpp"

namespace attrprompt::ad {
namespace {

Tape& tape_of(const Var& a) {
  require(a.valid(), ErrorKind::kState, "operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  require(b.tape() == &t, ErrorKind::kState, "variables belong to different tapes");
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kInvalidArgument,
          std::string(op) + ": shape mismatch");
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto& d = dst.data();
  const auto& s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// dst += a * b^T  (a: n x k, b: m x k, dst: n x m)
void accumulate_matmul_nt(Tensor& dst, const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.row(i).data();
    double* di = dst.row(i).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      di[j] += s;
    }
  }
}

// dst += a^T * b  (a: n x k, b: n x m, dst: k x m)
void accumulate_matmul_tn(Tensor& dst, const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.row(i).data();
    const double* bi = b.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* dp = dst.row(p).data();
      for (std::size_t j = 0; j < m; ++j) dp[j] += aip * bi[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

const Tensor& Var::value() const {
  require(valid(), ErrorKind::kState, "unbound variable");
  return tape_->value_of(id_);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamStore& store, std::string_view name) {
  const std::string key(name);
  if (auto it = params_.find(key); it != params_.end()) return Var(this, it->second);
  Tensor value = store.get(name).value;
  if (value.rank() < 2) value = value.reshaped({1, value.size()});
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  params_.emplace(key, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](const Var& v) { return needs_grad(v); });
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_of(const Var& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss, ParamStore& store) {
  require(loss.valid() && loss.tape() == this && !nodes_.empty(), ErrorKind::kState,
          "backward called without a recorded forward pass");
  require(loss.value().size() == 1, ErrorKind::kState, "backward requires a scalar loss");
  for (auto& n : nodes_) n.grad = Tensor();
  grad_of(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad, n.value);
  }
  store.zero_grad();
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    auto& dst = store.get(name).grad.data();
    const auto& src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record(attrprompt::matmul(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const Tensor& g, const Tensor&) {
                    if (t.needs_grad(a)) accumulate_matmul_nt(t.grad_of(a), g, b.value());
                    if (t.needs_grad(b)) accumulate_matmul_tn(t.grad_of(b), a.value(), g);
                  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.record(attrprompt::transpose(a.value()), {a},
                  [a](Tape& t, const Tensor& g, const Tensor&) {
                    accumulate(t.grad_of(a), attrprompt::transpose(g));
                  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(b)) accumulate(t.grad_of(b), g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(b)) {
      auto& gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require(row.value().size() == a.cols(), ErrorKind::kInvalidArgument,
          "add_row: width mismatch");
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += row.value()[c];
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g, const Tensor&) {
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(row)) {
      auto& gr = t.grad_of(row);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g.at(r, c);
    }
  });
}

Var add_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  require(col.value().size() == a.rows(), ErrorKind::kInvalidArgument,
          "add_col: height mismatch");
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += col.value()[r];
  return t.record(std::move(out), {a, col}, [a, col](Tape& t, const Tensor& g, const Tensor&) {
    if (t.needs_grad(a)) accumulate(t.grad_of(a), g);
    if (t.needs_grad(col)) {
      auto& gc = t.grad_of(col);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gc[r] += g.at(r, c);
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.needs_grad(a)) {
      auto& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (t.needs_grad(b)) {
      auto& gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x *= s;
  return t.record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x += s;
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    accumulate(t.grad_of(a), g);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return t.record(Tensor::matrix(1, 1, s), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    for (double& x : t.grad_of(a).data()) x += g[0];
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(1, c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.value().at(r, j);
  for (double& x : out.data()) x /= static_cast<double>(n);
  return t.record(std::move(out), {a}, [a, n](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga.at(r, j) += g[j] / static_cast<double>(n);
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x = std::log(x);
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.value()[i];
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x = std::exp(x);
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor& y) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    x = 0.5 * x * (1.0 + std::tanh(u));
  }
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = a.value()[i];
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  require(bias.tape() == &t, ErrorKind::kState, "variables belong to different tapes");
  const std::size_t n = x.rows(), c = x.cols();
  require(gain.value().size() == c && bias.value().size() == c, ErrorKind::kInvalidArgument,
          "layer_norm: parameter width mismatch");
  Tensor xhat = Tensor::matrix(n, c);
  std::vector<double> inv_std(n);
  Tensor out = Tensor::matrix(n, c);
  for (std::size_t r = 0; r < n; ++r) {
    auto in = x.value().row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat.at(r, j) = (in[j] - mean) * inv_std[r];
      out.at(r, j) = gain.value()[j] * xhat.at(r, j) + bias.value()[j];
    }
  }
  return t.record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, const Tensor& g, const Tensor&) {
        const std::size_t n = g.rows(), c = g.cols();
        if (t.needs_grad(gain)) {
          auto& gg = t.grad_of(gain);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g.at(r, j) * xhat.at(r, j);
        }
        if (t.needs_grad(bias)) {
          auto& gb = t.grad_of(bias);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(r, j);
        }
        if (t.needs_grad(x)) {
          auto& gx = t.grad_of(x);
          std::vector<double> dxhat(c);
          for (std::size_t r = 0; r < n; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = g.at(r, j) * gain.value()[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat.at(r, j);
            }
            mean_d /= static_cast<double>(c);
            mean_dx /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j)
              gx.at(r, j) += inv_std[r] * (dxhat[j] - mean_d - xhat.at(r, j) * mean_dx);
          }
        }
      });
}

Var softmax_rows(Var a, double temperature) {
  Tape& t = tape_of(a);
  return t.record(attrprompt::softmax_rows(a.value(), temperature), {a},
                  [a, temperature](Tape& t, const Tensor& g, const Tensor& y) {
                    auto& ga = t.grad_of(a);
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double inner = 0.0;
                      for (std::size_t j = 0; j < y.cols(); ++j) inner += g.at(r, j) * y.at(r, j);
                      for (std::size_t j = 0; j < y.cols(); ++j)
                        ga.at(r, j) += y.at(r, j) * (g.at(r, j) - inner) / temperature;
                    }
                  });
}

Var logsumexp_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : x.row(r)) s += std::exp(v - mx);
    out[r] = mx + std::log(s);
  }
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor& y) {
    auto& ga = t.grad_of(a);
    const Tensor& x = a.value();
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < x.cols(); ++j)
        ga.at(r, j) += g[r] * std::exp(x.at(r, j) - y[r]);
  });
}

Var l2_normalize_rows(Var a) {
  Tape& t = tape_of(a);
  Tensor out = attrprompt::l2_normalize_rows(a.value());
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor& y) {
    auto& ga = t.grad_of(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const double norm = l2_norm(a.value().row(r));
      const double proj = dot(y.row(r), g.row(r));
      for (std::size_t j = 0; j < y.cols(); ++j)
        ga.at(r, j) += (g.at(r, j) - y.at(r, j) * proj) / norm;
    }
  });
}

Var causal_mask(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = r + 1; c < out.cols(); ++c)
      out.at(r, c) = -std::numeric_limits<double>::infinity();
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c <= r && c < g.cols(); ++c) ga.at(r, c) += g.at(r, c);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  require(begin + count <= a.rows(), ErrorKind::kInvalidArgument, "slice_rows: out of range");
  const std::size_t c = a.cols();
  Tensor out = Tensor::matrix(count, c);
  std::copy_n(a.value().data().begin() + static_cast<std::ptrdiff_t>(begin * c), count * c,
              out.data().begin());
  return t.record(std::move(out), {a}, [a, begin](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    const std::size_t off = begin * g.cols();
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  require(begin + count <= a.cols(), ErrorKind::kInvalidArgument, "slice_cols: out of range");
  Tensor out = Tensor::matrix(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out.at(r, j) = a.value().at(r, begin + j);
  return t.record(std::move(out), {a}, [a, begin](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(r, begin + j) += g.at(r, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::kInvalidArgument, "concat_rows: nothing to concatenate");
  Tape& t = tape_of(parts.front());
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.tape() == &t, ErrorKind::kState, "variables belong to different tapes");
    require(p.cols() == c, ErrorKind::kInvalidArgument, "concat_rows: width mismatch");
    rows += p.rows();
  }
  Tensor out = Tensor::matrix(rows, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), inputs, [inputs](Tape& t, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      const std::size_t n = p.value().size();
      if (t.needs_grad(p)) {
        auto& gp = t.grad_of(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::kInvalidArgument, "concat_cols: nothing to concatenate");
  Tape& t = tape_of(parts.front());
  const std::size_t r = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require(p.tape() == &t, ErrorKind::kState, "variables belong to different tapes");
    require(p.rows() == r, ErrorKind::kInvalidArgument, "concat_cols: height mismatch");
    cols += p.cols();
  }
  Tensor out = Tensor::matrix(r, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.value().at(i, j);
    off += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), inputs, [inputs](Tape& t, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      if (t.needs_grad(p)) {
        auto& gp = t.grad_of(p);
        for (std::size_t i = 0; i < gp.rows(); ++i)
          for (std::size_t j = 0; j < gp.cols(); ++j) gp.at(i, j) += g.at(i, off + j);
      }
      off += p.cols();
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& t = tape_of(a);
  const std::size_t c = a.cols();
  Tensor out = Tensor::matrix(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < a.rows(), ErrorKind::kInvalidArgument, "gather_rows: index out of range");
    auto src = a.value().row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {a}, [a, idx](Tape& t, const Tensor& g, const Tensor&) {
    auto& ga = t.grad_of(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(idx[i], j) += g.at(i, j);
  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  Tape& t = tape_of(a);
  require(r < a.rows() && c < a.cols(), ErrorKind::kInvalidArgument, "pick: index out of range");
  return t.record(Tensor::matrix(1, 1, a.value().at(r, c)), {a},
                  [a, r, c](Tape& t, const Tensor& g, const Tensor&) {
                    t.grad_of(a).at(r, c) += g[0];
                  });
}

Var scaled_dot_attention(Var q, Var k, Var v, bool causal) {
  require(q.cols() == k.cols(), ErrorKind::kInvalidArgument,
          "attention: query and key widths differ");
  require(k.rows() == v.rows() && k.rows() >= 1, ErrorKind::kInvalidArgument,
          "attention: key/value count mismatch");
  Var logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (causal) logits = causal_mask(logits);
  return matmul(softmax_rows(logits), v);
}

}  // namespace attrprompt::ad
