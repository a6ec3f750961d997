#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "attrprompt/tensor.hpp"
#include "attrprompt/text_encoder.hpp"

namespace attrprompt::data {

enum class Split { kTrain, kTest };
enum class Partition { kBase, kNovel };

// dataset.json:
//   {"format_version": 1, "num_samples", "tokens_per_image", "patch_dim",
//    "class_names": [...], "labels": [...], "split_tags": ["train"|"test"...],
//    "base_novel": ["base"|"novel", ...]}
struct DatasetManifest {
  std::size_t num_samples = 0;
  std::size_t tokens_per_image = 0;
  std::size_t patch_dim = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> labels;
  std::vector<Split> split_tags;
  std::vector<Partition> base_novel;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  // Throws kInvalidManifest on any broken invariant.
  void validate() const;
  std::vector<std::size_t> classes(Partition partition) const;
  // Sample indices with the given split whose label is in `classes`.
  std::vector<std::size_t> indices(Split split, const std::vector<std::size_t>& classes) const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);

// Patches are held exactly as stored on disk (32-bit floats), so a load/save
// round trip is bit-exact.
struct Dataset {
  DatasetManifest manifest;
  std::vector<float> patches;  // num_samples x tokens_per_image x patch_dim

  // T_img x patch_dim, widened to 64-bit.
  Tensor image(std::size_t index) const;
};

// Reads dir/dataset.json and dir/patches.bin (little-endian f32).
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Exactly k distinct train-tagged indices from each base class, drawn without
// replacement; returned in ascending order.
std::vector<std::size_t> kshot_sample(const DatasetManifest& manifest, std::size_t k,
                                      std::uint64_t seed);

// Synthetic attribute-grid benchmark. Classes come in pairs that share one
// "theme" vector, so the average patch of an image says little about which
// member of the pair it belongs to. Each class owns `attributes_per_class`
// motif vectors (centred so the pair's class means coincide); an image is
// theme + noise everywhere except `motif_patches` randomly placed patches that
// carry distinct class motifs + noise.
struct SynthSpec {
  std::size_t classes = 6;
  std::size_t num_base = 4;
  std::size_t attributes_per_class = 4;
  std::size_t motif_dim = 32;
  std::size_t tokens_per_image = 16;
  std::size_t motif_patches = 4;
  std::size_t samples_per_class = 16;  // train split
  std::size_t test_per_class = 16;
  double noise_std = 0.1;
  double motif_scale = 1.5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& doc);

struct SynthResult {
  Dataset dataset;
  text::AttributeTable attributes;
  std::vector<Tensor> themes;  // one 1 x d row per class pair
  std::vector<Tensor> motifs;  // per class, attributes_per_class x d
};

SynthResult synthesize(const SynthSpec& spec);
// Writes dataset.json, patches.bin and attributes.json under out_dir.
SynthResult synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace attrprompt::data
