#pragma once

#include <cstddef>
#include <string>

#include "attrprompt/autodiff.hpp"
#include "attrprompt/param_store.hpp"
#include "attrprompt/rng.hpp"

namespace attrprompt {

// Pre-norm transformer block:
//   x = x + Wo * MHA(LN1(x))
//   x = x + W2 * gelu(W1 * LN2(x) + b1)
// The two output projections carry no bias, so zeroing Wo and W2 turns the
// block into the identity.
struct TransformerLayerSpec {
  std::string prefix;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  bool causal = false;

  std::string name(const char* leaf) const { return prefix + "." + leaf; }
};

void init_transformer_layer(ParamStore& store, Rng& rng, const TransformerLayerSpec& spec,
                            double init_std);

ad::Var transformer_layer_forward(ad::Tape& tape, const ParamStore& store,
                                  const TransformerLayerSpec& spec, ad::Var x);

ad::Var linear_norm(ad::Tape& tape, const ParamStore& store, const std::string& prefix,
                    ad::Var x);

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width);

}  // namespace attrprompt
