#pragma once

#include <cstddef>
#include <functional>

#include "attrprompt/autodiff.hpp"
#include "attrprompt/param_store.hpp"
#include "attrprompt/rng.hpp"

namespace attrprompt::vision {

struct VitConfig {
  std::size_t layers = 6;
  std::size_t width = 32;  // d_v
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t n_prompts = 4;  // M
  std::size_t avae_layer = 4;  // enhancement runs after this (1-based) layer
  std::size_t embed_dim = 32;  // joint space d
  std::size_t tokens_per_image = 16;
  bool patch_pos_embed = true;
  bool separate_prompt_projection = false;

  void validate() const;
};

// One position-split view of the ViT sequence [CLS | prompts | patches].
struct LayerState {
  ad::Var cls;      // 1 x d_v
  ad::Var prompts;  // M x d_v
  ad::Var patches;  // T x d_v
};

// Called once, after layer avae_layer, with (U_l, s_l); returns the refined
// prompts that enter layer l + 1.
using Enhancer = std::function<ad::Var(ad::Var prompts, ad::Var cls)>;

struct ImageEncoding {
  ad::Var global;   // f, 1 x d, unit norm
  ad::Var prompts;  // F, M x d, unit rows
  ad::Var cls_mid;  // s_l before enhancement, 1 x d_v
};

class VisionEncoder {
 public:
  explicit VisionEncoder(VitConfig config);

  const VitConfig& config() const noexcept { return config_; }

  void init_params(ParamStore& store, Rng& rng, double init_std) const;

  // Layer j in 1..L applied to the concatenated sequence.
  LayerState layer_forward(ad::Tape& tape, const ParamStore& store, std::size_t j,
                           const LayerState& in) const;

  ImageEncoding encode_image(ad::Tape& tape, const ParamStore& store, const Tensor& patches,
                             const Enhancer* enhancer = nullptr) const;

  // ln_post -> projection to d -> L2 normalize, row-wise.
  ad::Var project(ad::Tape& tape, const ParamStore& store, ad::Var x,
                  bool prompt_rows = false) const;

 private:
  VitConfig config_;
};

}  // namespace attrprompt::vision
