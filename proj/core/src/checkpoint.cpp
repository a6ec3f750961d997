#include "attrprompt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "attrprompt/error.hpp"

namespace attrprompt {
namespace {

using nlohmann::json;

void put_le64(std::string& out, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_le64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["step_count"] = store.step_count();
  manifest["params"] = json::array();
  std::string blob;
  for (const auto& p : store.entries()) {
    manifest["params"].push_back({{"name", p.name},
                                  {"shape", p.value.shape()},
                                  {"dtype", "f64"},
                                  {"offset", blob.size()},
                                  {"trainable", p.trainable}});
    for (double x : p.value.data()) put_le64(blob, x);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  require(static_cast<bool>(bin), ErrorKind::kIo, "failed writing " + (dir / "params.bin").string());
}

ParamStore read_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidManifest, std::string("checkpoint manifest: ") + e.what());
  }
  const std::string blob = read_file(dir / "params.bin");
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  ParamStore store;
  try {
    require(manifest.at("format_version").get<int>() == 1, ErrorKind::kInvalidManifest,
            "unsupported checkpoint format_version");
    for (const auto& entry : manifest.at("params")) {
      require(entry.at("dtype").get<std::string>() == "f64", ErrorKind::kInvalidManifest,
              "unsupported checkpoint dtype");
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      Tensor value(shape);
      require(offset + 8 * value.size() <= blob.size(), ErrorKind::kCorruptDataset,
              "params.bin is shorter than the manifest requires");
      for (std::size_t i = 0; i < value.size(); ++i) value[i] = get_le64(bytes + offset + 8 * i);
      store.add(entry.at("name").get<std::string>(), std::move(value),
                entry.value("trainable", true));
    }
    store.set_step_count(manifest.value("step_count", std::uint64_t{0}));
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidManifest, std::string("checkpoint manifest: ") + e.what());
  }
  return store;
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& dir) {
  ParamStore loaded = read_checkpoint(dir);
  require(loaded.size() == store.size(), ErrorKind::kInvalidManifest,
          "checkpoint parameter count does not match the model");
  for (auto& p : store.entries()) {
    const auto& src = loaded.get(p.name);
    require(src.value.shape() == p.value.shape(), ErrorKind::kInvalidManifest,
            "checkpoint shape mismatch for '" + p.name + "'");
    p.value = src.value;
  }
  store.set_step_count(loaded.step_count());
}

}  // namespace attrprompt
