#include "attrprompt/config.hpp"

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrprompt/error.hpp"

namespace attrprompt {
namespace {

using nlohmann::json;

// Binds each JSON key to a MapConfig field so both directions share one table.
template <typename Fn>
void visit_fields(MapConfig& c, Fn&& fn) {
  fn("seed", c.seed);
  fn("text_vocab_size", c.text.vocab_size);
  fn("text_width", c.text.width);
  fn("text_layers", c.text.layers);
  fn("text_heads", c.text.heads);
  fn("text_max_len", c.text.max_len);
  fn("n_ctx", c.text.n_ctx);
  fn("embed_dim", c.vision.embed_dim);
  fn("mlp_ratio", c.vision.mlp_ratio);
  fn("vision_layers", c.vision.layers);
  fn("vision_width", c.vision.width);
  fn("vision_heads", c.vision.heads);
  fn("n_visual_prompts", c.vision.n_prompts);
  fn("avae_layer", c.vision.avae_layer);
  fn("tokens_per_image", c.vision.tokens_per_image);
  fn("patch_pos_embed", c.vision.patch_pos_embed);
  fn("separate_prompt_projection", c.vision.separate_prompt_projection);
  fn("n_textual_prompts", c.n_textual_prompts);
  fn("lambda", c.lambda);
  fn("avae_key_dim", c.avae_key_dim);
  fn("use_avae", c.use_avae);
  fn("beta", c.beta);
  fn("tau", c.tau);
  fn("gamma", c.sinkhorn.gamma);
  fn("sinkhorn_iters", c.sinkhorn.max_iter);
  fn("sinkhorn_tol", c.sinkhorn.tol);
  fn("unroll_sinkhorn", c.unroll_sinkhorn);
  fn("init_std", c.init_std);
  fn("freeze_backbone", c.freeze_backbone);
  fn("lr", c.lr);
  fn("grad_clip", c.grad_clip);
  fn("epochs", c.epochs);
  fn("batch_size", c.batch_size);
  fn("shots", c.shots);
}

// Derived fields that are not separate keys.
void sync(MapConfig& c) {
  c.text.embed_dim = c.vision.embed_dim;
  c.text.mlp_ratio = c.vision.mlp_ratio;
}

}  // namespace

json config_to_json(const MapConfig& config) {
  MapConfig c = config;
  json doc = json::object();
  visit_fields(c, [&](const char* key, auto& field) { doc[key] = field; });
  return doc;
}

MapConfig config_from_json(const json& doc, const MapConfig& base) {
  require(doc.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  MapConfig c = base;
  std::vector<std::string> bad;
  json known = config_to_json(c);
  for (const auto& [key, value] : doc.items())
    if (!known.contains(key)) bad.push_back("unknown key '" + key + "'");

  visit_fields(c, [&](const char* key, auto& field) {
    if (!doc.contains(key)) return;
    const json& v = doc.at(key);
    using T = std::decay_t<decltype(field)>;
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else {
      ok = v.is_number_integer() && (std::is_signed_v<T> || v.get<long long>() >= 0);
    }
    if (ok) {
      field = v.get<T>();
    } else {
      bad.push_back("key '" + std::string(key) + "' has an invalid value " + v.dump());
    }
  });
  sync(c);
  try {
    c.validate();
  } catch (const Error& e) {
    bad.emplace_back(e.what());
  }
  if (!bad.empty()) {
    std::string msg;
    for (std::size_t i = 0; i < bad.size(); ++i) msg += (i ? "; " : "") + bad[i];
    fail(ErrorKind::kConfig, msg);
  }
  return c;
}

MapConfig load_config(const std::filesystem::path& path, const MapConfig& base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return config_from_json(doc, base);
}

MapConfig tiny_reference_config() {
  MapConfig c;
  c.text.vocab_size = 64;
  c.text.width = 8;
  c.text.layers = 1;
  c.text.heads = 2;
  c.text.max_len = 10;
  c.text.n_ctx = 2;
  c.vision.layers = 2;
  c.vision.width = 8;
  c.vision.heads = 2;
  c.vision.mlp_ratio = 2;
  c.vision.n_prompts = 2;
  c.vision.avae_layer = 1;
  c.vision.embed_dim = 8;
  c.vision.tokens_per_image = 4;
  c.n_textual_prompts = 2;
  c.lambda = 3;
  c.avae_key_dim = 8;
  c.init_std = 0.3;
  c.sinkhorn = {0.1, 200, 1e-12};
  c.batch_size = 2;
  sync(c);
  return c;
}

}  // namespace attrprompt
