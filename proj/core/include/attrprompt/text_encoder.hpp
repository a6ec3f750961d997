#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "attrprompt/autodiff.hpp"
#include "attrprompt/param_store.hpp"
#include "attrprompt/rng.hpp"

namespace attrprompt::text {

// Lowercases, splits on anything that is not an ASCII letter or digit, and
// hashes each word (64-bit FNV-1a) into buckets 1..size-1. Bucket 0 is never
// produced.
class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size);

  std::size_t size() const noexcept { return size_; }
  std::vector<std::uint32_t> tokenize(std::string_view text) const;
  std::uint32_t token_id(std::string_view word) const;

 private:
  std::size_t size_;
};

// attributes.json:
//   {"format_version": 1,
//    "classes": [{"name": "...", "attributes": ["...", ...]}, ...]}
struct ClassAttributes {
  std::string name;
  std::vector<std::string> attributes;
};

struct AttributeTable {
  std::vector<ClassAttributes> classes;

  const ClassAttributes* find(std::string_view name) const;
};

AttributeTable parse_attributes(const nlohmann::json& doc);
nlohmann::json to_json(const AttributeTable& table);
AttributeTable load_attributes(const std::filesystem::path& path);
void save_attributes(const AttributeTable& table, const std::filesystem::path& path);

struct TextEncoderConfig {
  std::size_t vocab_size = 1024;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t max_len = 16;
  std::size_t n_ctx = 4;
  std::size_t embed_dim = 32;
};

// One prompt p = [ctx_1 .. ctx_n | class-name tokens | attribute tokens].
// The context slots are the shared learnable vectors, so only the word tokens
// are stored. Sequences shorter than max_len are never padded in memory: the
// encoder is causal and pools the last real position, so trailing padding
// could not influence the result.
struct TextualAttributePrompt {
  std::size_t class_id = 0;
  std::size_t attribute_index = 0;
  std::vector<std::uint32_t> token_ids;
  std::size_t n_ctx = 0;

  std::size_t length() const noexcept { return n_ctx + token_ids.size(); }
};

// Exactly class_names.size() * n_attributes prompts in (class, attribute)
// order; the first n_attributes descriptions of each class are used.
std::vector<TextualAttributePrompt> build_prompts(const std::vector<std::string>& class_names,
                                                  const AttributeTable& attributes,
                                                  std::size_t n_attributes,
                                                  const Vocabulary& vocab,
                                                  const TextEncoderConfig& config);

// G_k as tape variables: rows N x d (unit rows) and the class embedding 1 x d.
struct PromptSetVars {
  std::size_t class_id = 0;
  ad::Var rows;
  ad::Var class_embedding;
};

struct EncodedPromptSet {
  std::size_t class_id = 0;
  Tensor rows;             // N x d, unit rows
  Tensor class_embedding;  // 1 x d, normalized mean of rows
};

class TextEncoder {
 public:
  explicit TextEncoder(TextEncoderConfig config);

  const TextEncoderConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }

  void init_params(ParamStore& store, Rng& rng, double init_std) const;

  // Token lookup + positions -> causal transformer -> last position ->
  // final norm -> projection to embed_dim -> L2 normalize. Returns 1 x d.
  ad::Var encode_prompt(ad::Tape& tape, const ParamStore& store,
                        const TextualAttributePrompt& prompt) const;

  // Groups consecutive prompts by class (as produced by build_prompts).
  std::vector<PromptSetVars> encode_all(ad::Tape& tape, const ParamStore& store,
                                        const std::vector<TextualAttributePrompt>& prompts,
                                        std::size_t n_classes) const;

  std::vector<EncodedPromptSet> encode_all(const ParamStore& store,
                                           const std::vector<TextualAttributePrompt>& prompts,
                                           std::size_t n_classes) const;

  static constexpr const char* kContextParam = "text.context";

 private:
  TextEncoderConfig config_;
  Vocabulary vocab_;
};

EncodedPromptSet to_values(const PromptSetVars& vars);

}  // namespace attrprompt::text
