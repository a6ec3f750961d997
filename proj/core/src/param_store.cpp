#include "attrprompt/param_store.hpp"

#include "attrprompt/error.hpp"

namespace attrprompt {

Parameter& ParamStore::add(std::string name, Tensor value, bool trainable) {
  require(!index_.contains(name), ErrorKind::kInvalidArgument,
          "duplicate parameter name '" + name + "'");
  Tensor grad(value.shape());
  index_.emplace(name, entries_.size());
  entries_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), trainable});
  return entries_.back();
}

Parameter& ParamStore::add_normal(std::string name, std::vector<std::size_t> shape,
                                  Rng& rng, double stddev) {
  Tensor value(std::move(shape));
  for (double& x : value.data()) x = rng.normal(0.0, stddev);
  return add(std::move(name), std::move(value));
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

Parameter& ParamStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), ErrorKind::kInvalidArgument,
          "unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

const Parameter& ParamStore::get(std::string_view name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : entries_) std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
}

void ParamStore::set_trainable_prefix(std::string_view prefix, bool trainable) {
  for (auto& p : entries_)
    if (std::string_view(p.name).starts_with(prefix)) p.trainable = trainable;
}

void sgd_step(ParamStore& store, double lr) {
  require(lr > 0.0, ErrorKind::kInvalidArgument, "learning rate must be positive");
  for (auto& p : store.entries()) {
    if (p.trainable) {
      auto& v = p.value.data();
      const auto& g = p.grad.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
  }
  store.zero_grad();
  store.increment_step();
}

}  // namespace attrprompt
