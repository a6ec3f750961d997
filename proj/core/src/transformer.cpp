#include "attrprompt/transformer.hpp"

#include <vector>

#include "attrprompt/error.hpp"

namespace attrprompt {

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width) {
  store.add(prefix + ".gain", Tensor({width}, 1.0));
  store.add(prefix + ".bias", Tensor({width}, 0.0));
}

ad::Var linear_norm(ad::Tape& tape, const ParamStore& store, const std::string& prefix,
                    ad::Var x) {
  return ad::layer_norm(x, tape.param(store, prefix + ".gain"),
                        tape.param(store, prefix + ".bias"));
}

void init_transformer_layer(ParamStore& store, Rng& rng, const TransformerLayerSpec& spec,
                            double init_std) {
  require(spec.heads >= 1 && spec.width % spec.heads == 0, ErrorKind::kConfig,
          spec.prefix + ": width must be divisible by the head count");
  const std::size_t w = spec.width, hidden = spec.width * spec.mlp_ratio;
  init_layer_norm(store, spec.name("ln1"), w);
  store.add_normal(spec.name("attn.wq"), {w, w}, rng, init_std);
  store.add_normal(spec.name("attn.wk"), {w, w}, rng, init_std);
  store.add_normal(spec.name("attn.wv"), {w, w}, rng, init_std);
  store.add_normal(spec.name("attn.wo"), {w, w}, rng, init_std);
  init_layer_norm(store, spec.name("ln2"), w);
  store.add_normal(spec.name("mlp.w1"), {w, hidden}, rng, init_std);
  store.add(spec.name("mlp.b1"), Tensor({hidden}, 0.0));
  store.add_normal(spec.name("mlp.w2"), {hidden, w}, rng, init_std);
}

ad::Var transformer_layer_forward(ad::Tape& tape, const ParamStore& store,
                                  const TransformerLayerSpec& spec, ad::Var x) {
  require(x.cols() == spec.width, ErrorKind::kInvalidArgument,
          spec.prefix + ": input width does not match the layer");
  auto p = [&](const char* leaf) { return tape.param(store, spec.name(leaf)); };

  ad::Var h = linear_norm(tape, store, spec.name("ln1"), x);
  ad::Var q = ad::matmul(h, p("attn.wq"));
  ad::Var k = ad::matmul(h, p("attn.wk"));
  ad::Var v = ad::matmul(h, p("attn.wv"));
  const std::size_t head_dim = spec.width / spec.heads;
  std::vector<ad::Var> heads;
  heads.reserve(spec.heads);
  for (std::size_t i = 0; i < spec.heads; ++i) {
    const std::size_t off = i * head_dim;
    heads.push_back(ad::scaled_dot_attention(ad::slice_cols(q, off, head_dim),
                                             ad::slice_cols(k, off, head_dim),
                                             ad::slice_cols(v, off, head_dim), spec.causal));
  }
  ad::Var attn = spec.heads == 1 ? heads.front() : ad::concat_cols(heads);
  x = ad::add(x, ad::matmul(attn, p("attn.wo")));

  h = linear_norm(tape, store, spec.name("ln2"), x);
  h = ad::gelu(ad::add_row(ad::matmul(h, p("mlp.w1")), p("mlp.b1")));
  return ad::add(x, ad::matmul(h, p("mlp.w2")));
}

}  // namespace attrprompt
