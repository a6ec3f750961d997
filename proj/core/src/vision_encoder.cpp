#include "attrprompt/vision_encoder.hpp"

#include <array>
#include <string>

#include "attrprompt/error.hpp"
#include "attrprompt/transformer.hpp"

namespace attrprompt::vision {
namespace {

TransformerLayerSpec layer_spec(const VitConfig& c, std::size_t j) {
  return {"vision.layer" + std::to_string(j), c.width, c.heads, c.mlp_ratio, false};
}

}  // namespace

void VitConfig::validate() const {
  require(layers >= 1, ErrorKind::kConfig, "vision_layers must be >= 1");
  require(n_prompts >= 1, ErrorKind::kConfig, "n_visual_prompts must be >= 1");
  require(avae_layer >= 1 && avae_layer <= layers, ErrorKind::kConfig,
          "avae_layer must lie in 1..vision_layers");
  require(heads >= 1 && width % heads == 0, ErrorKind::kConfig,
          "vision_width must be divisible by vision_heads");
  require(tokens_per_image >= 1 && embed_dim >= 1, ErrorKind::kConfig,
          "vision sizes must be positive");
}

VisionEncoder::VisionEncoder(VitConfig config) : config_(config) { config_.validate(); }

void VisionEncoder::init_params(ParamStore& store, Rng& rng, double init_std) const {
  const auto& c = config_;
  store.add_normal("vision.cls", {c.width}, rng, init_std);
  store.add_normal("vision.prompts", {c.n_prompts, c.width}, rng, init_std);
  if (c.patch_pos_embed)
    store.add_normal("vision.pos_embedding", {c.tokens_per_image, c.width}, rng, init_std);
  for (std::size_t j = 1; j <= c.layers; ++j)
    init_transformer_layer(store, rng, layer_spec(c, j), init_std);
  init_layer_norm(store, "vision.ln_post", c.width);
  store.add_normal("vision.proj", {c.width, c.embed_dim}, rng, init_std);
  if (c.separate_prompt_projection)
    store.add_normal("vision.prompt_proj", {c.width, c.embed_dim}, rng, init_std);
}

LayerState VisionEncoder::layer_forward(ad::Tape& tape, const ParamStore& store, std::size_t j,
                                        const LayerState& in) const {
  require(j >= 1 && j <= config_.layers, ErrorKind::kInvalidArgument, "layer index out of range");
  require(in.cls.cols() == config_.width && in.prompts.cols() == config_.width &&
              in.patches.cols() == config_.width,
          ErrorKind::kInvalidArgument, "token width does not match the ViT width");
  const std::size_t m = in.prompts.rows(), t = in.patches.rows();
  const std::array<ad::Var, 3> parts{in.cls, in.prompts, in.patches};
  ad::Var seq = transformer_layer_forward(tape, store, layer_spec(config_, j),
                                          ad::concat_rows(parts));
  return {ad::slice_rows(seq, 0, 1), ad::slice_rows(seq, 1, m), ad::slice_rows(seq, 1 + m, t)};
}

ad::Var VisionEncoder::project(ad::Tape& tape, const ParamStore& store, ad::Var x,
                               bool prompt_rows) const {
  const char* proj =
      prompt_rows && config_.separate_prompt_projection ? "vision.prompt_proj" : "vision.proj";
  x = linear_norm(tape, store, "vision.ln_post", x);
  return ad::l2_normalize_rows(ad::matmul(x, tape.param(store, proj)));
}

ImageEncoding VisionEncoder::encode_image(ad::Tape& tape, const ParamStore& store,
                                          const Tensor& patches, const Enhancer* enhancer) const {
  require(patches.cols() == config_.width, ErrorKind::kInvalidArgument,
          "patch width does not match the ViT width");
  Tensor e0 = patches.reshaped({patches.rows(), patches.cols()});
  LayerState state;
  state.cls = tape.param(store, "vision.cls");
  state.prompts = tape.param(store, "vision.prompts");
  state.patches = tape.constant(std::move(e0));
  if (config_.patch_pos_embed) {
    require(patches.rows() == config_.tokens_per_image, ErrorKind::kInvalidArgument,
            "image has " + std::to_string(patches.rows()) + " patches, expected " +
                std::to_string(config_.tokens_per_image));
    state.patches = ad::add(state.patches, tape.param(store, "vision.pos_embedding"));
  }

  ImageEncoding out;
  for (std::size_t j = 1; j <= config_.layers; ++j) {
    state = layer_forward(tape, store, j, state);
    if (j == config_.avae_layer) {
      out.cls_mid = state.cls;
      if (enhancer != nullptr) state.prompts = (*enhancer)(state.prompts, state.cls);
    }
  }
  out.global = project(tape, store, state.cls);
  out.prompts = project(tape, store, state.prompts, true);
  return out;
}

}  // namespace attrprompt::vision
