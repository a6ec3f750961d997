#include <gtest/gtest.h>

#include "attrprompt/config.hpp"
#include "attrprompt/train.hpp"
#include "unit/test_support.hpp"

namespace attrprompt {
namespace {

// A synthetic task sized for the tiny reference model.
struct Toy {
  data::SynthResult synth;
  MapConfig config;
  std::vector<std::size_t> train_idx, space;

  explicit Toy(double lr = 0.05, std::size_t epochs = 3) {
    data::SynthSpec s;
    s.classes = 3;
    s.num_base = 3;
    s.attributes_per_class = 2;
    s.motif_patches = 2;
    s.motif_dim = 8;
    s.tokens_per_image = 4;
    s.samples_per_class = 4;
    s.test_per_class = 2;
    synth = data::synthesize(s);
    config = tiny_reference_config();
    config.lr = lr;
    config.epochs = epochs;
    const auto& m = synth.dataset.manifest;
    space = m.classes(data::Partition::kBase);
    train_idx = m.indices(data::Split::kTrain, space);
  }
  MapModel model() const {
    return MapModel(config, synth.dataset.manifest.class_names, synth.attributes);
  }
};

TEST(Train, ZeroLearningRateLeavesEverythingFixed) {
  Toy toy(0.0, 3);
  MapModel m = toy.model();
  const ParamStore before = m.params();
  const auto report = train(m, toy.synth.dataset, toy.train_idx, toy.space);
  ASSERT_EQ(report.epochs.size(), 3u);
  for (const auto& e : report.epochs) {
    EXPECT_EQ(e.loss, report.epochs[0].loss);
    EXPECT_EQ(e.train_acc, report.epochs[0].train_acc);
  }
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(before.entries()[i].value, m.params().entries()[i].value) << before.entries()[i].name;
}

TEST(Train, RunsAreBitwiseReproducible) {
  Toy toy;
  MapModel a = toy.model(), b = toy.model();
  const auto ra = train(a, toy.synth.dataset, toy.train_idx, toy.space);
  const auto rb = train(b, toy.synth.dataset, toy.train_idx, toy.space);
  for (std::size_t e = 0; e < ra.epochs.size(); ++e) EXPECT_EQ(ra.epochs[e].loss, rb.epochs[e].loss);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_EQ(a.params().entries()[i].value, b.params().entries()[i].value);
}

TEST(Train, UpdatesContextVectorsAndReportsEachEpoch) {
  Toy toy(0.05, 2);
  MapModel m = toy.model();
  const Tensor ctx = m.params().get(text::TextEncoder::kContextParam).value;
  std::vector<std::size_t> seen;
  train(m, toy.synth.dataset, toy.train_idx, toy.space,
        [&](const EpochStats& s) { seen.push_back(s.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
  EXPECT_GT(max_abs_diff(ctx, m.params().get(text::TextEncoder::kContextParam).value), 0.0);
  EXPECT_EQ(m.params().step_count(), 2u * 6u);  // 12 samples, batch 2
}

TEST(Train, LossStaysAboveTheUnnormalizedBound) {
  Toy toy(0.05, 3);
  MapModel m = toy.model();
  for (const auto& e : train(m, toy.synth.dataset, toy.train_idx, toy.space).epochs) {
    EXPECT_GE(e.loss, -std::log(2.0) - 1e-9);
    EXPECT_GE(e.train_acc, 0.0);
    EXPECT_LE(e.train_acc, 1.0);
  }
}

TEST(Train, FrozenBackboneOnlyMovesPrompts) {
  Toy toy(0.05, 1);
  toy.config.freeze_backbone = true;
  MapModel m = toy.model();
  const ParamStore before = m.params();
  train(m, toy.synth.dataset, toy.train_idx, toy.space);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& p = m.params().entries()[i];
    if (!p.trainable) {
      EXPECT_EQ(p.value, before.entries()[i].value) << p.name;
    }
  }
  EXPECT_FALSE(m.params().get("vision.prompts").value == before.get("vision.prompts").value);
}

TEST(Train, EmptyTrainingSetIsRejected) {
  Toy toy;
  MapModel m = toy.model();
  EXPECT_ERROR_KIND(train(m, toy.synth.dataset, std::vector<std::size_t>{}, toy.space),
                    ErrorKind::kInvalidArgument);
}

TEST(Evaluate, ScoresAndConfusion) {
  const std::vector<std::size_t> space{4, 7};
  const std::vector<std::size_t> labels{4, 4, 7, 7, 7};
  const auto all_right = score_predictions(labels, labels, space);
  EXPECT_EQ(all_right.accuracy, 1.0);
  const auto constant = score_predictions(labels, std::vector<std::size_t>(5, 7), space);
  EXPECT_DOUBLE_EQ(constant.accuracy, 0.6);
  EXPECT_EQ(constant.per_class_accuracy, (std::vector<double>{0.0, 1.0}));
  ASSERT_EQ(constant.confusion.size(), 2u);
  EXPECT_EQ(constant.confusion[0][1] + constant.confusion[0][0], 2u);
  EXPECT_EQ(constant.confusion[1][0] + constant.confusion[1][1], 3u);
  EXPECT_ERROR_KIND(score_predictions({}, {}, space), ErrorKind::kInvalidArgument);
  EXPECT_ERROR_KIND(score_predictions(std::vector<std::size_t>{5}, std::vector<std::size_t>{4}, space),
                    ErrorKind::kInvalidArgument);
}

TEST(Evaluate, ModelEvaluationIsDeterministic) {
  Toy toy;
  MapModel m = toy.model();
  const auto test = toy.synth.dataset.manifest.indices(data::Split::kTest, toy.space);
  const auto a = evaluate(m, toy.synth.dataset, test, toy.space);
  const auto b = evaluate(m, toy.synth.dataset, test, toy.space);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.count, test.size());
  std::size_t total = 0;
  for (const auto& row : a.confusion)
    for (auto c : row) total += c;
  EXPECT_EQ(total, test.size());
  EXPECT_ERROR_KIND(evaluate(m, toy.synth.dataset, std::vector<std::size_t>{}, toy.space),
                    ErrorKind::kInvalidArgument);
}

}  // namespace
}  // namespace attrprompt
