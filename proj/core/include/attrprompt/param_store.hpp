#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attrprompt/rng.hpp"
#include "attrprompt/tensor.hpp"

namespace attrprompt {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Frozen parameters keep their gradient slot but are skipped by SGD.
  bool trainable = true;
};

// Named registry of learnable tensors. Iteration order is insertion order,
// which is also the checkpoint order.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter& add_normal(std::string name, std::vector<std::size_t> shape, Rng& rng,
                        double stddev);

  bool contains(std::string_view name) const;
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;

  std::vector<Parameter>& entries() noexcept { return entries_; }
  const std::vector<Parameter>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  std::uint64_t step_count() const noexcept { return step_count_; }
  void set_step_count(std::uint64_t n) noexcept { step_count_ = n; }
  void increment_step() noexcept { ++step_count_; }

  void zero_grad();
  void set_trainable_prefix(std::string_view prefix, bool trainable);

 private:
  std::vector<Parameter> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_count_ = 0;
};

// value <- value - lr * grad for every trainable entry, then zero all
// gradients and bump step_count.
void sgd_step(ParamStore& store, double lr);

}  // namespace attrprompt
