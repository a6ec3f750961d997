#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "attrprompt/data.hpp"
#include "unit/test_support.hpp"

namespace attrprompt::data {
namespace {

using attrprompt::testing::TempDir;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SynthSpec small_spec() {
  SynthSpec s;
  s.samples_per_class = 8;
  s.test_per_class = 4;
  return s;
}

TEST(Dataset, RoundTripIsBitExact) {
  TempDir dir;
  const auto synth = synthesize(small_spec());
  save_dataset(synth.dataset, dir.path());
  const Dataset back = load_dataset(dir.path());
  EXPECT_EQ(back.manifest.labels, synth.dataset.manifest.labels);
  EXPECT_EQ(back.manifest.class_names, synth.dataset.manifest.class_names);
  ASSERT_EQ(back.patches.size(), synth.dataset.patches.size());
  EXPECT_EQ(std::memcmp(back.patches.data(), synth.dataset.patches.data(),
                        back.patches.size() * sizeof(float)),
            0);
  EXPECT_EQ(std::filesystem::file_size(dir / "patches.bin"), 4 * back.patches.size());
}

TEST(Dataset, ImageWidensToDouble) {
  const auto synth = synthesize(small_spec());
  const Tensor img = synth.dataset.image(3);
  ASSERT_EQ(img.rows(), 16u);
  ASSERT_EQ(img.cols(), 32u);
  EXPECT_EQ(img.at(1, 2), static_cast<double>(synth.dataset.patches[3 * 16 * 32 + 32 + 2]));
  EXPECT_ERROR_KIND(synth.dataset.image(10000), ErrorKind::kInvalidArgument);
}

TEST(Dataset, TruncatedBlobIsCorrupt) {
  TempDir dir;
  save_dataset(synthesize(small_spec()).dataset, dir.path());
  std::filesystem::resize_file(dir / "patches.bin", std::filesystem::file_size(dir / "patches.bin") - 4);
  EXPECT_ERROR_KIND(load_dataset(dir.path()), ErrorKind::kCorruptDataset);
}

TEST(Dataset, OutOfRangeLabelIsRejected) {
  TempDir dir;
  save_dataset(synthesize(small_spec()).dataset, dir.path());
  auto doc = nlohmann::json::parse(slurp(dir / "dataset.json"));
  doc["labels"][0] = doc["class_names"].size();
  std::ofstream(dir / "dataset.json") << doc.dump();
  EXPECT_ERROR_KIND(load_dataset(dir.path()), ErrorKind::kInvalidManifest);
}

TEST(Dataset, EveryClassNeedsATestSample) {
  auto m = synthesize(small_spec()).dataset.manifest;
  for (std::size_t i = 0; i < m.num_samples; ++i)
    if (m.labels[i] == 2) m.split_tags[i] = Split::kTrain;
  EXPECT_ERROR_KIND(m.validate(), ErrorKind::kInvalidManifest);
}

TEST(Dataset, FormatVersionAndMissingFiles) {
  TempDir dir;
  save_dataset(synthesize(small_spec()).dataset, dir.path());
  auto doc = nlohmann::json::parse(slurp(dir / "dataset.json"));
  EXPECT_EQ(doc.at("format_version"), 1);
  doc["format_version"] = 2;
  std::ofstream(dir / "dataset.json") << doc.dump();
  EXPECT_ERROR_KIND(load_dataset(dir.path()), ErrorKind::kInvalidManifest);
  EXPECT_ERROR_KIND(load_dataset(dir / "absent"), ErrorKind::kIo);
}

TEST(KShot, SixteenShotsOverFiveBaseClasses) {
  SynthSpec s;
  s.classes = 7;
  s.num_base = 5;
  s.samples_per_class = 20;
  s.test_per_class = 2;
  const auto m = synthesize(s).dataset.manifest;
  const auto idx = kshot_sample(m, 16, 0);
  ASSERT_EQ(idx.size(), 80u);
  std::vector<std::size_t> per_class(7, 0);
  for (auto i : idx) {
    EXPECT_EQ(m.split_tags[i], Split::kTrain);
    EXPECT_EQ(m.base_novel[m.labels[i]], Partition::kBase);
    ++per_class[m.labels[i]];
  }
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(per_class[k], 16u);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), idx.size());
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
}

TEST(KShot, FullClassSizeTakesEverything) {
  const auto m = synthesize(small_spec()).dataset.manifest;
  const auto idx = kshot_sample(m, 8, 3);
  EXPECT_EQ(idx, m.indices(Split::kTrain, m.classes(Partition::kBase)));
}

TEST(KShot, SeedDeterminesTheDraw) {
  const auto m = synthesize(small_spec()).dataset.manifest;
  EXPECT_EQ(kshot_sample(m, 3, 5), kshot_sample(m, 3, 5));
  EXPECT_NE(kshot_sample(m, 3, 5), kshot_sample(m, 3, 6));
}

TEST(KShot, NeverRepeatsOrLeaks) {
  const auto m = synthesize(small_spec()).dataset.manifest;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto idx = kshot_sample(m, 1 + seed % 8, seed);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), idx.size());
    for (auto i : idx) {
      EXPECT_EQ(m.split_tags[i], Split::kTrain);
      EXPECT_EQ(m.base_novel[m.labels[i]], Partition::kBase);
    }
  }
}

TEST(KShot, TooFewSamples) {
  const auto m = synthesize(small_spec()).dataset.manifest;
  EXPECT_ERROR_KIND(kshot_sample(m, 9, 0), ErrorKind::kInsufficientSamples);
  EXPECT_ERROR_KIND(kshot_sample(m, 0, 0), ErrorKind::kInvalidArgument);
}

TEST(Synth, DefaultLayout) {
  const auto r = synthesize(SynthSpec{});
  const auto& m = r.dataset.manifest;
  EXPECT_EQ(m.num_classes(), 6u);
  EXPECT_EQ(m.classes(Partition::kBase), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(m.classes(Partition::kNovel), (std::vector<std::size_t>{4, 5}));
  EXPECT_EQ(m.num_samples, 6u * 32u);
  ASSERT_EQ(r.attributes.classes.size(), 6u);
  std::set<std::string> all;
  for (const auto& c : r.attributes.classes) {
    EXPECT_EQ(c.attributes.size(), 4u);
    all.insert(c.attributes.begin(), c.attributes.end());
  }
  EXPECT_EQ(all.size(), 24u);
  EXPECT_EQ(r.themes.size(), 3u);
  EXPECT_NO_THROW(m.validate());
}

TEST(Synth, FilesAreByteIdenticalAcrossRuns) {
  TempDir a, b;
  synth_generate(small_spec(), a.path());
  synth_generate(small_spec(), b.path());
  for (const char* f : {"dataset.json", "patches.bin", "attributes.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  auto other = small_spec();
  other.seed = 1;
  TempDir c;
  synth_generate(other, c.path());
  EXPECT_NE(slurp(a / "patches.bin"), slurp(c / "patches.bin"));
  EXPECT_NO_THROW(load_dataset(a.path()));
}

TEST(Synth, SpecJsonRejectsUnknownKeys) {
  EXPECT_EQ(synth_spec_from_json(to_json(small_spec())).samples_per_class, 8u);
  EXPECT_ERROR_KIND(synth_spec_from_json(nlohmann::json{{"clases", 3}}), ErrorKind::kConfig);
  EXPECT_ERROR_KIND(synth_spec_from_json(nlohmann::json{{"noise_std", -1.0}}), ErrorKind::kConfig);
}

// Brute-force baselines on a noise-free pair that shares a theme.
struct Baselines {
  double centroid = 0.0;
  double motif = 0.0;
};

Baselines pair_baselines() {
  SynthSpec s;
  s.classes = 2;
  s.num_base = 2;
  s.noise_std = 0.0;
  const auto r = synthesize(s);
  const auto& ds = r.dataset;
  const auto& m = ds.manifest;
  const std::size_t t = m.tokens_per_image, d = m.patch_dim;
  auto mean_patch = [&](std::size_t i) {
    std::vector<double> mu(d, 0.0);
    const Tensor img = ds.image(i);
    for (std::size_t p = 0; p < t; ++p)
      for (std::size_t j = 0; j < d; ++j) mu[j] += img.at(p, j) / static_cast<double>(t);
    return mu;
  };
  std::vector<std::vector<double>> centroid(2, std::vector<double>(d, 0.0));
  std::vector<double> count(2, 0.0);
  for (auto i : m.indices(Split::kTrain, {0, 1})) {
    const auto mu = mean_patch(i);
    for (std::size_t j = 0; j < d; ++j) centroid[m.labels[i]][j] += mu[j];
    count[m.labels[i]] += 1.0;
  }
  for (std::size_t k = 0; k < 2; ++k)
    for (double& x : centroid[k]) x /= count[k];

  Baselines out;
  const auto test = m.indices(Split::kTest, {0, 1});
  for (auto i : test) {
    const auto mu = mean_patch(i);
    double dist[2] = {0.0, 0.0};
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t j = 0; j < d; ++j) dist[k] += (mu[j] - centroid[k][j]) * (mu[j] - centroid[k][j]);
    out.centroid += (dist[1] < dist[0] ? 1u : 0u) == m.labels[i];

    // Vote by nearest motif over every non-theme patch.
    const Tensor img = ds.image(i);
    double votes[2] = {0.0, 0.0};
    for (std::size_t p = 0; p < t; ++p) {
      double best = INFINITY;
      std::size_t who = 0;
      for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t a = 0; a < r.motifs[k].rows(); ++a) {
          double e = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double diff = img.at(p, j) - r.motifs[k].at(a, j);
            e += diff * diff;
          }
          if (e < best) best = e, who = k;
        }
      if (best < 1e-9) votes[who] += 1.0;
    }
    out.motif += (votes[1] > votes[0] ? 1u : 0u) == m.labels[i];
  }
  out.centroid /= static_cast<double>(test.size());
  out.motif /= static_cast<double>(test.size());
  return out;
}

TEST(Synth, GlobalFeaturesAreAmbiguousButMotifsAreNot) {
  const auto b = pair_baselines();
  EXPECT_LE(b.centroid, 0.60);
  EXPECT_EQ(b.motif, 1.0);
}

}  // namespace
}  // namespace attrprompt::data
