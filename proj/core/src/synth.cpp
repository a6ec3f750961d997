#include <array>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "attrprompt/data.hpp"
#include "attrprompt/error.hpp"
#include "attrprompt/rng.hpp"

namespace attrprompt::data {
namespace {

using nlohmann::json;

constexpr std::array<const char*, 12> kClassNames = {
    "alder", "birch", "cedar", "dogwood", "elm", "fir",
    "ginkgo", "hazel", "iris", "juniper", "kapok", "larch"};

std::string class_name(std::size_t k) {
  if (k < kClassNames.size()) return kClassNames[k];
  return "class" + std::to_string(k);
}

constexpr double kGrid = 1.0 / 4096.0;

double quantize(double x) { return std::round(x / kGrid) * kGrid; }

Tensor random_direction(Rng& rng, std::size_t d) {
  Tensor v = Tensor::matrix(1, d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : v.data()) x = quantize(rng.normal(0.0, s));
  return v;
}

}  // namespace

void SynthSpec::validate() const {
  require(classes >= 1 && attributes_per_class >= 1 && motif_dim >= 1 &&
              tokens_per_image >= 1 && samples_per_class >= 1 && test_per_class >= 1,
          ErrorKind::kConfig, "synthetic counts must all be >= 1");
  require(num_base <= classes, ErrorKind::kConfig, "num_base exceeds classes");
  require(motif_patches <= tokens_per_image && motif_patches <= attributes_per_class,
          ErrorKind::kConfig,
          "motif_patches must not exceed tokens_per_image or attributes_per_class");
  require(noise_std >= 0.0, ErrorKind::kConfig, "noise_std must be >= 0");
}

json to_json(const SynthSpec& s) {
  return {{"classes", s.classes},
          {"num_base", s.num_base},
          {"attributes_per_class", s.attributes_per_class},
          {"motif_dim", s.motif_dim},
          {"tokens_per_image", s.tokens_per_image},
          {"motif_patches", s.motif_patches},
          {"samples_per_class", s.samples_per_class},
          {"test_per_class", s.test_per_class},
          {"noise_std", s.noise_std},
          {"motif_scale", s.motif_scale},
          {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const json& doc) {
  SynthSpec s;
  const json defaults = to_json(s);
  std::string bad;
  for (const auto& [key, value] : doc.items())
    if (!defaults.contains(key)) bad += (bad.empty() ? "" : ", ") + key;
  require(bad.empty(), ErrorKind::kConfig, "unknown synth spec keys: " + bad);
  try {
    s.classes = doc.value("classes", s.classes);
    s.num_base = doc.value("num_base", s.num_base);
    s.attributes_per_class = doc.value("attributes_per_class", s.attributes_per_class);
    s.motif_dim = doc.value("motif_dim", s.motif_dim);
    s.tokens_per_image = doc.value("tokens_per_image", s.tokens_per_image);
    s.motif_patches = doc.value("motif_patches", s.motif_patches);
    s.samples_per_class = doc.value("samples_per_class", s.samples_per_class);
    s.test_per_class = doc.value("test_per_class", s.test_per_class);
    s.noise_std = doc.value("noise_std", s.noise_std);
    s.motif_scale = doc.value("motif_scale", s.motif_scale);
    s.seed = doc.value("seed", s.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthResult synthesize(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t d = spec.motif_dim, t = spec.tokens_per_image;
  const std::size_t a = spec.attributes_per_class;

  SynthResult out;
  for (std::size_t p = 0; p < (spec.classes + 1) / 2; ++p)
    out.themes.push_back(random_direction(rng, d));
  for (std::size_t k = 0; k < spec.classes; ++k) {
    Tensor m = Tensor::matrix(a, d);
    for (std::size_t i = 0; i < a; ++i) {
      Tensor v = random_direction(rng, d);
      std::copy(v.data().begin(), v.data().end(), m.row(i).begin());
    }
    // Centre so every class in a pair has the same mean patch. Values sit on
    // a dyadic grid with each column summing to exactly zero, so the mean
    // patches of a pair agree bit for bit after the float32 cast.
    if (a > 1) {
      for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < a; ++i) mean += m.at(i, j);
        mean /= static_cast<double>(a);
        double residual = 0.0;
        for (std::size_t i = 0; i < a; ++i) {
          m.at(i, j) = quantize(m.at(i, j) - mean);
          residual += m.at(i, j);
        }
        m.at(a - 1, j) -= residual;
      }
    }
    for (double& x : m.data()) x *= spec.motif_scale;
    out.motifs.push_back(std::move(m));
  }

  auto& man = out.dataset.manifest;
  man.tokens_per_image = t;
  man.patch_dim = d;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    man.class_names.push_back(class_name(k));
    man.base_novel.push_back(k < spec.num_base ? Partition::kBase : Partition::kNovel);
  }

  auto& patches = out.dataset.patches;
  std::vector<std::size_t> positions(t), motif_ids(a);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const Tensor& theme = out.themes[k / 2];
    for (std::size_t s = 0; s < spec.samples_per_class + spec.test_per_class; ++s) {
      man.labels.push_back(k);
      man.split_tags.push_back(s < spec.samples_per_class ? Split::kTrain : Split::kTest);
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      std::iota(motif_ids.begin(), motif_ids.end(), std::size_t{0});
      rng.shuffle(positions);
      rng.shuffle(motif_ids);
      std::vector<long> motif_at(t, -1);
      for (std::size_t i = 0; i < spec.motif_patches; ++i)
        motif_at[positions[i]] = static_cast<long>(motif_ids[i]);
      for (std::size_t p = 0; p < t; ++p) {
        for (std::size_t j = 0; j < d; ++j) {
          const double base =
              motif_at[p] >= 0 ? out.motifs[k].at(static_cast<std::size_t>(motif_at[p]), j)
                               : theme[j];
          const double noise = spec.noise_std > 0.0 ? rng.normal(0.0, spec.noise_std) : 0.0;
          patches.push_back(static_cast<float>(base + noise));
        }
      }
    }
  }
  man.num_samples = man.labels.size();
  man.validate();

  for (std::size_t k = 0; k < spec.classes; ++k) {
    text::ClassAttributes entry{man.class_names[k], {}};
    for (std::size_t i = 0; i < a; ++i)
      entry.attributes.push_back("visible " + man.class_names[k] + "mark" + std::to_string(i) +
                                 " pattern");
    out.attributes.classes.push_back(std::move(entry));
  }
  return out;
}

SynthResult synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  SynthResult result = synthesize(spec);
  save_dataset(result.dataset, out_dir);
  text::save_attributes(result.attributes, out_dir / "attributes.json");
  return result;
}

}  // namespace attrprompt::data
