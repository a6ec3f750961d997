#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "attrprompt/data.hpp"
#include "attrprompt/gradcheck.hpp"
#include "attrprompt/model.hpp"

namespace attrprompt {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  // Both measured on the whole training set with the parameters left at the
  // end of the epoch.
  double loss = 0.0;
  double train_acc = 0.0;  // combined head
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Minibatch SGD on the combined-score loss over `train_indices`, predicting
// within `label_space`. Deterministic for a fixed config.seed. A non-finite
// batch loss aborts with kNumericFailure naming the epoch and batch.
TrainReport train(MapModel& model, const data::Dataset& dataset,
                  std::span<const std::size_t> train_indices,
                  std::span<const std::size_t> label_space,
                  const EpochCallback& on_epoch = {});

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::size_t> label_space;
  std::vector<double> per_class_accuracy;           // by label-space position
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t count = 0;
};

EvalReport evaluate(const MapModel& model, const data::Dataset& dataset,
                    std::span<const std::size_t> indices,
                    std::span<const std::size_t> label_space, Head head = Head::kCombined);

// Accuracy bookkeeping from (label, prediction) pairs within a label space.
EvalReport score_predictions(std::span<const std::size_t> labels,
                             std::span<const std::size_t> predicted,
                             std::span<const std::size_t> label_space);

}  // namespace attrprompt

namespace attrprompt {

struct GradcheckProblem {
  std::vector<std::string> class_names;
  text::AttributeTable attributes;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
};

// Random images and attribute strings sized for `config` (N strings per
// class), one image per class.
GradcheckProblem make_gradcheck_problem(const MapConfig& config, std::size_t classes,
                                        std::uint64_t seed);

// Central-difference check of every parameter entry of `model` on one batch.
// With plan-detached OT the transport plans are recorded once and replayed
// during the perturbed evaluations; with unrolled Sinkhorn the solve itself
// is re-run (use a tolerance small enough that the sweep count is fixed).
std::vector<GradientReport> check_model_gradients(MapModel& model,
                                                  std::span<const Tensor> images,
                                                  std::span<const std::size_t> labels,
                                                  double h, double tol_rel);

}  // namespace attrprompt
