#include "attrprompt/text_encoder.hpp"

#include <cctype>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "attrprompt/error.hpp"
#include "attrprompt/transformer.hpp"

namespace attrprompt::text {
namespace {

using nlohmann::json;

TransformerLayerSpec layer_spec(const TextEncoderConfig& c, std::size_t i) {
  return {"text.layer" + std::to_string(i), c.width, c.heads, c.mlp_ratio, /*causal=*/true};
}

}  // namespace

Vocabulary::Vocabulary(std::size_t size) : size_(size) {
  require(size >= 2, ErrorKind::kConfig, "vocabulary needs at least 2 buckets");
}

std::uint32_t Vocabulary::token_id(std::string_view word) const {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : word) {
    h ^= static_cast<std::uint64_t>(std::tolower(ch));
    h *= 1099511628211ull;
  }
  return static_cast<std::uint32_t>(1 + h % (size_ - 1));
}

std::vector<std::uint32_t> Vocabulary::tokenize(std::string_view text) const {
  std::vector<std::uint32_t> ids;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) ids.push_back(token_id(word));
    word.clear();
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch) && ch < 128) {
      word.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

const ClassAttributes* AttributeTable::find(std::string_view name) const {
  for (const auto& c : classes)
    if (c.name == name) return &c;
  return nullptr;
}

AttributeTable parse_attributes(const json& doc) {
  AttributeTable table;
  try {
    if (doc.contains("format_version"))
      require(doc.at("format_version").get<int>() == 1, ErrorKind::kInvalidManifest,
              "attributes: unsupported format_version");
    for (const auto& c : doc.at("classes")) {
      table.classes.push_back({c.at("name").get<std::string>(),
                               c.at("attributes").get<std::vector<std::string>>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidManifest, std::string("attributes: ") + e.what());
  }
  return table;
}

json to_json(const AttributeTable& table) {
  json doc;
  doc["format_version"] = 1;
  doc["classes"] = json::array();
  for (const auto& c : table.classes)
    doc["classes"].push_back({{"name", c.name}, {"attributes", c.attributes}});
  return doc;
}

AttributeTable load_attributes(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open attributes file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidManifest, path.string() + ": " + e.what());
  }
  return parse_attributes(doc);
}

void save_attributes(const AttributeTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << to_json(table).dump(2) << '\n';
}

std::vector<TextualAttributePrompt> build_prompts(const std::vector<std::string>& class_names,
                                                  const AttributeTable& attributes,
                                                  std::size_t n_attributes,
                                                  const Vocabulary& vocab,
                                                  const TextEncoderConfig& config) {
  require(n_attributes >= 1, ErrorKind::kConfig, "need at least one textual prompt per class");
  require(config.max_len > config.n_ctx, ErrorKind::kConfig,
          "max_len must leave room after the context slots");
  const std::size_t room = config.max_len - config.n_ctx;
  std::vector<TextualAttributePrompt> prompts;
  prompts.reserve(class_names.size() * n_attributes);
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    const ClassAttributes* entry = attributes.find(class_names[k]);
    const std::size_t available = entry ? entry->attributes.size() : 0;
    require(available >= n_attributes, ErrorKind::kInsufficientAttributes,
            "class '" + class_names[k] + "' has " + std::to_string(available) +
                " attribute descriptions, need " + std::to_string(n_attributes));
    const auto name_ids = vocab.tokenize(class_names[k]);
    for (std::size_t n = 0; n < n_attributes; ++n) {
      const auto attr_ids = vocab.tokenize(entry->attributes[n]);
      require(!attr_ids.empty(), ErrorKind::kInvalidArgument,
              "class '" + class_names[k] + "' attribute " + std::to_string(n) + " is empty");
      require(name_ids.size() < room, ErrorKind::kInvalidArgument,
              "class name '" + class_names[k] + "' leaves no room for attribute tokens");
      TextualAttributePrompt p;
      p.class_id = k;
      p.attribute_index = n;
      p.n_ctx = config.n_ctx;
      p.token_ids = name_ids;
      for (auto id : attr_ids) {
        if (p.token_ids.size() == room) break;
        p.token_ids.push_back(id);
      }
      prompts.push_back(std::move(p));
    }
  }
  return prompts;
}

TextEncoder::TextEncoder(TextEncoderConfig config)
    : config_(config), vocab_(config.vocab_size) {
  require(config_.width >= 1 && config_.embed_dim >= 1, ErrorKind::kConfig,
          "text encoder widths must be positive");
}

void TextEncoder::init_params(ParamStore& store, Rng& rng, double init_std) const {
  const auto& c = config_;
  store.add_normal("text.token_embedding", {c.vocab_size, c.width}, rng, init_std);
  store.add_normal(kContextParam, {c.n_ctx, c.width}, rng, init_std);
  store.add_normal("text.pos_embedding", {c.max_len, c.width}, rng, init_std);
  for (std::size_t i = 0; i < c.layers; ++i)
    init_transformer_layer(store, rng, layer_spec(c, i), init_std);
  init_layer_norm(store, "text.ln_final", c.width);
  store.add_normal("text.proj", {c.width, c.embed_dim}, rng, init_std);
}

ad::Var TextEncoder::encode_prompt(ad::Tape& tape, const ParamStore& store,
                                   const TextualAttributePrompt& prompt) const {
  const std::size_t len = prompt.length();
  require(len <= config_.max_len && !prompt.token_ids.empty(), ErrorKind::kInvalidArgument,
          "prompt length out of range");
  std::vector<std::size_t> ids(prompt.token_ids.begin(), prompt.token_ids.end());
  std::vector<ad::Var> parts;
  if (prompt.n_ctx > 0) parts.push_back(tape.param(store, kContextParam));
  parts.push_back(ad::gather_rows(tape.param(store, "text.token_embedding"), ids));
  ad::Var x = ad::concat_rows(parts);
  x = ad::add(x, ad::slice_rows(tape.param(store, "text.pos_embedding"), 0, len));
  for (std::size_t i = 0; i < config_.layers; ++i)
    x = transformer_layer_forward(tape, store, layer_spec(config_, i), x);
  x = linear_norm(tape, store, "text.ln_final", ad::slice_rows(x, len - 1, 1));
  return ad::l2_normalize_rows(ad::matmul(x, tape.param(store, "text.proj")));
}

std::vector<PromptSetVars> TextEncoder::encode_all(
    ad::Tape& tape, const ParamStore& store,
    const std::vector<TextualAttributePrompt>& prompts, std::size_t n_classes) const {
  std::vector<std::vector<ad::Var>> rows(n_classes);
  for (const auto& p : prompts) {
    require(p.class_id < n_classes, ErrorKind::kInvalidArgument, "prompt class out of range");
    rows[p.class_id].push_back(encode_prompt(tape, store, p));
  }
  std::vector<PromptSetVars> sets;
  sets.reserve(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    require(!rows[k].empty(), ErrorKind::kInsufficientAttributes,
            "class " + std::to_string(k) + " has no prompts");
    PromptSetVars s;
    s.class_id = k;
    s.rows = rows[k].size() == 1 ? rows[k].front() : ad::concat_rows(rows[k]);
    // A single prompt is its own (already unit) mean.
    s.class_embedding =
        rows[k].size() == 1 ? s.rows : ad::l2_normalize_rows(ad::mean_rows(s.rows));
    sets.push_back(s);
  }
  return sets;
}

std::vector<EncodedPromptSet> TextEncoder::encode_all(
    const ParamStore& store, const std::vector<TextualAttributePrompt>& prompts,
    std::size_t n_classes) const {
  ad::Tape tape;
  std::vector<EncodedPromptSet> out;
  for (const auto& s : encode_all(tape, store, prompts, n_classes)) out.push_back(to_values(s));
  return out;
}

EncodedPromptSet to_values(const PromptSetVars& vars) {
  return {vars.class_id, vars.rows.value(), vars.class_embedding.value()};
}

}  // namespace attrprompt::text
