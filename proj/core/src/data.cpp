#include "attrprompt/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "attrprompt/error.hpp"
#include "attrprompt/rng.hpp"

namespace attrprompt::data {
namespace {

using nlohmann::json;

std::string split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }
std::string partition_name(Partition p) { return p == Partition::kBase ? "base" : "novel"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  fail(ErrorKind::kInvalidManifest, "unknown split tag '" + s + "'");
}

Partition parse_partition(const std::string& s) {
  if (s == "base") return Partition::kBase;
  if (s == "novel") return Partition::kNovel;
  fail(ErrorKind::kInvalidManifest, "unknown base/novel tag '" + s + "'");
}

}  // namespace

void DatasetManifest::validate() const {
  const std::size_t c = num_classes();
  require(c >= 1, ErrorKind::kInvalidManifest, "dataset declares no classes");
  require(tokens_per_image >= 1 && patch_dim >= 1, ErrorKind::kInvalidManifest,
          "tokens_per_image and patch_dim must be positive");
  require(labels.size() == num_samples && split_tags.size() == num_samples,
          ErrorKind::kInvalidManifest, "labels/split_tags length differs from num_samples");
  require(base_novel.size() == c, ErrorKind::kInvalidManifest,
          "base_novel must tag every class");
  std::vector<std::size_t> test_count(c, 0);
  for (std::size_t i = 0; i < num_samples; ++i) {
    require(labels[i] < c, ErrorKind::kInvalidManifest,
            "sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                " but only " + std::to_string(c) + " classes exist");
    if (split_tags[i] == Split::kTest) ++test_count[labels[i]];
  }
  for (std::size_t k = 0; k < c; ++k)
    require(test_count[k] >= 1, ErrorKind::kInvalidManifest,
            "class '" + class_names[k] + "' has no test samples");
}

std::vector<std::size_t> DatasetManifest::classes(Partition partition) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < base_novel.size(); ++k)
    if (base_novel[k] == partition) out.push_back(k);
  return out;
}

std::vector<std::size_t> DatasetManifest::indices(Split split,
                                                  const std::vector<std::size_t>& cls) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < num_samples; ++i)
    if (split_tags[i] == split && std::find(cls.begin(), cls.end(), labels[i]) != cls.end())
      out.push_back(i);
  return out;
}

json to_json(const DatasetManifest& m) {
  json doc;
  doc["format_version"] = 1;
  doc["num_samples"] = m.num_samples;
  doc["tokens_per_image"] = m.tokens_per_image;
  doc["patch_dim"] = m.patch_dim;
  doc["class_names"] = m.class_names;
  doc["labels"] = m.labels;
  auto& splits = doc["split_tags"] = json::array();
  for (auto s : m.split_tags) splits.push_back(split_name(s));
  auto& parts = doc["base_novel"] = json::array();
  for (auto p : m.base_novel) parts.push_back(partition_name(p));
  return doc;
}

DatasetManifest manifest_from_json(const json& doc) {
  DatasetManifest m;
  try {
    require(doc.value("format_version", 1) == 1, ErrorKind::kInvalidManifest,
            "unsupported dataset format_version");
    m.num_samples = doc.at("num_samples").get<std::size_t>();
    m.tokens_per_image = doc.at("tokens_per_image").get<std::size_t>();
    m.patch_dim = doc.at("patch_dim").get<std::size_t>();
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    m.labels = doc.at("labels").get<std::vector<std::size_t>>();
    for (const auto& s : doc.at("split_tags")) m.split_tags.push_back(parse_split(s.get<std::string>()));
    for (const auto& p : doc.at("base_novel"))
      m.base_novel.push_back(parse_partition(p.get<std::string>()));
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidManifest, std::string("dataset.json: ") + e.what());
  }
  m.validate();
  return m;
}

Tensor Dataset::image(std::size_t index) const {
  const std::size_t t = manifest.tokens_per_image, d = manifest.patch_dim;
  require(index < manifest.num_samples, ErrorKind::kInvalidArgument, "sample index out of range");
  Tensor out = Tensor::matrix(t, d);
  const float* src = patches.data() + index * t * d;
  for (std::size_t i = 0; i < t * d; ++i) out[i] = static_cast<double>(src[i]);
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "dataset.json");
  require(static_cast<bool>(meta), ErrorKind::kIo,
          "cannot open " + (dir / "dataset.json").string());
  json doc;
  try {
    doc = json::parse(meta);
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidManifest, std::string("dataset.json: ") + e.what());
  }
  Dataset ds;
  ds.manifest = manifest_from_json(doc);

  std::ifstream bin(dir / "patches.bin", std::ios::binary);
  require(static_cast<bool>(bin), ErrorKind::kIo, "cannot open " + (dir / "patches.bin").string());
  const std::string bytes{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};
  const std::size_t count =
      ds.manifest.num_samples * ds.manifest.tokens_per_image * ds.manifest.patch_dim;
  require(bytes.size() == 4 * count, ErrorKind::kCorruptDataset,
          "patches.bin has " + std::to_string(bytes.size()) + " bytes, expected " +
              std::to_string(4 * count));
  ds.patches.resize(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    ds.patches[i] = std::bit_cast<float>(bits);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.manifest.validate();
  const std::size_t count =
      ds.manifest.num_samples * ds.manifest.tokens_per_image * ds.manifest.patch_dim;
  require(ds.patches.size() == count, ErrorKind::kCorruptDataset,
          "patch buffer does not match the manifest");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "dataset.json") << to_json(ds.manifest).dump(2) << '\n';
  std::string bytes(4 * count, '\0');
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(ds.patches[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  std::ofstream bin(dir / "patches.bin", std::ios::binary);
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(bin), ErrorKind::kIo, "failed writing patches.bin");
}

std::vector<std::size_t> kshot_sample(const DatasetManifest& manifest, std::size_t k,
                                      std::uint64_t seed) {
  require(k >= 1, ErrorKind::kInvalidArgument, "shots must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t c : manifest.classes(Partition::kBase)) {
    auto pool = manifest.indices(Split::kTrain, {c});
    require(pool.size() >= k, ErrorKind::kInsufficientSamples,
            "class '" + manifest.class_names[c] + "' has " + std::to_string(pool.size()) +
                " training samples, need " + std::to_string(k));
    // Partial Fisher-Yates: the first k slots become the sample.
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace attrprompt::data
