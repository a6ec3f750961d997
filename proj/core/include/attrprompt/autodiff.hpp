#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attrprompt/param_store.hpp"
#include "attrprompt/tensor.hpp"

// Reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every operation of one forward pass. Values are computed
// eagerly; calling Tape::backward on a 1x1 result sweeps the tape in reverse
// and writes d(loss)/d(param) into the ParamStore gradient slots.
namespace attrprompt::ad {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the node's output and its value; accumulates into
  // input gradients through Tape::grad_of.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a store entry; repeated calls with one name share a node.
  Var param(const ParamStore& store, std::string_view name);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss, ParamStore& store);

  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  // Gradient slot of an input node, allocated on first use.
  Tensor& grad_of(const Var& v);
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
// a (r x c) + col (r x 1) broadcast over columns.
Var add_col(Var a, Var col);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sum(Var a);
Var mean_rows(Var a);
Var log(Var a);
Var exp(Var a);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var a, double temperature = 1.0);
Var logsumexp_rows(Var a);
Var l2_normalize_rows(Var a);
// Strictly-upper-triangular entries become -inf (future positions masked).
Var causal_mask(Var a);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var pick(Var a, std::size_t r, std::size_t c);

// softmax(q k^T / sqrt(d_K)) v, optionally with a causal mask.
Var scaled_dot_attention(Var q, Var k, Var v, bool causal = false);

}  // namespace attrprompt::ad
