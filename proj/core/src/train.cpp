#include "attrprompt/train.hpp"

#include <algorithm>
#include <cmath>

#include "attrprompt/error.hpp"

namespace attrprompt {
namespace {

void clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.entries())
    if (p.trainable)
      for (double g : p.grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& p : params.entries())
    for (double& g : p.grad.data()) g *= scale;
}

}  // namespace

TrainReport train(MapModel& model, const data::Dataset& dataset,
                  std::span<const std::size_t> train_indices,
                  std::span<const std::size_t> label_space, const EpochCallback& on_epoch) {
  const MapConfig& cfg = model.config();
  require(!train_indices.empty(), ErrorKind::kInvalidArgument, "no training samples");
  Rng rng(cfg.seed + 1);
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
  ParamStore& params = model.params();

  auto gather = [&](std::span<const std::size_t> ids, std::size_t start, std::size_t end,
                    std::vector<Tensor>& images, std::vector<std::size_t>& labels) {
    images.clear();
    labels.clear();
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(dataset.image(ids[i]));
      labels.push_back(dataset.manifest.labels[ids[i]]);
    }
  };

  TrainReport report;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      gather(order, start, std::min(order.size(), start + cfg.batch_size), images, labels);
      ad::Tape tape;
      const auto text = model.encode_text(tape, label_space);
      ad::Var loss = model.batch_loss(tape, text, images, labels);
      require(std::isfinite(loss.value()[0]), ErrorKind::kNumericFailure,
              "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                  std::to_string(batch));
      tape.backward(loss, params);
      if (cfg.lr > 0.0) {
        if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
        sgd_step(params, cfg.lr);
      } else {
        params.zero_grad();
      }
    }

    // Report loss and accuracy of the end-of-epoch parameters over the whole
    // training set in caller order, so the trace does not depend on the
    // shuffle.
    double loss_sum = 0.0;
    std::size_t correct = 0;
    ad::Tape text_tape;
    const auto text = model.encode_text(text_tape, label_space);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      gather(train_indices, start, std::min(order.size(), start + cfg.batch_size), images, labels);
      ad::Tape tape;
      const auto local = MapModel::constant_text(tape, text);
      std::vector<ImageForward> forwards;
      const double value = model.batch_loss(tape, local, images, labels, nullptr, &forwards).value()[0];
      require(std::isfinite(value), ErrorKind::kNumericFailure,
              "non-finite loss after epoch " + std::to_string(epoch));
      loss_sum += value * static_cast<double>(labels.size());
      for (std::size_t i = 0; i < forwards.size(); ++i) {
        const auto& p = forwards[i].p_combined.value().data();
        const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        if (local.label_space[best] == labels[i]) ++correct;
      }
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()),
                     static_cast<double>(correct) / static_cast<double>(order.size())};
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return report;
}

EvalReport score_predictions(std::span<const std::size_t> labels,
                             std::span<const std::size_t> predicted,
                             std::span<const std::size_t> label_space) {
  require(!labels.empty(), ErrorKind::kInvalidArgument, "cannot evaluate an empty split");
  require(labels.size() == predicted.size(), ErrorKind::kInvalidArgument,
          "label/prediction count mismatch");
  const std::size_t c = label_space.size();
  auto pos = [&](std::size_t id) {
    auto it = std::find(label_space.begin(), label_space.end(), id);
    require(it != label_space.end(), ErrorKind::kInvalidArgument,
            "class " + std::to_string(id) + " is outside the label space");
    return static_cast<std::size_t>(it - label_space.begin());
  };
  EvalReport r;
  r.label_space.assign(label_space.begin(), label_space.end());
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  r.count = labels.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.confusion[pos(labels[i])][pos(predicted[i])];
    if (labels[i] == predicted[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.per_class_accuracy.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0;
    for (auto n : r.confusion[k]) row += n;
    r.per_class_accuracy[k] =
        row == 0 ? 0.0 : static_cast<double>(r.confusion[k][k]) / static_cast<double>(row);
  }
  return r;
}

EvalReport evaluate(const MapModel& model, const data::Dataset& dataset,
                    std::span<const std::size_t> indices,
                    std::span<const std::size_t> label_space, Head head) {
  require(!indices.empty(), ErrorKind::kInvalidArgument, "cannot evaluate an empty split");
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (auto i : indices) {
    images.push_back(dataset.image(i));
    labels.push_back(dataset.manifest.labels[i]);
  }
  const auto preds = model.predict(images, label_space);
  std::vector<std::size_t> predicted;
  for (const auto& p : preds) predicted.push_back(p.predicted(head));
  return score_predictions(labels, predicted, label_space);
}

}  // namespace attrprompt

namespace attrprompt {

GradcheckProblem make_gradcheck_problem(const MapConfig& config, std::size_t classes,
                                        std::uint64_t seed) {
  Rng rng(seed);
  GradcheckProblem p;
  for (std::size_t k = 0; k < classes; ++k) {
    p.class_names.push_back("class" + std::to_string(k));
    text::ClassAttributes entry{p.class_names.back(), {}};
    for (std::size_t n = 0; n < config.n_textual_prompts; ++n)
      entry.attributes.push_back("mark" + std::to_string(k) + "x" + std::to_string(n) + " tone" +
                                 std::to_string(rng.below(97)));
    p.attributes.classes.push_back(std::move(entry));
    Tensor img = Tensor::matrix(config.vision.tokens_per_image, config.vision.width);
    for (double& x : img.data()) x = rng.normal();
    p.images.push_back(std::move(img));
    p.labels.push_back(k);
  }
  return p;
}

std::vector<GradientReport> check_model_gradients(MapModel& model,
                                                  std::span<const Tensor> images,
                                                  std::span<const std::size_t> labels,
                                                  double h, double tol_rel) {
  const auto space = model.all_classes();
  const bool detached = !model.config().unroll_sinkhorn;
  PlanReplay replay;
  auto analytic = [&] {
    ad::Tape tape;
    const auto text = model.encode_text(tape, space);
    replay = {};
    ad::Var loss = model.batch_loss(tape, text, images, labels, detached ? &replay : nullptr);
    tape.backward(loss, model.params());
    replay.mode = PlanReplay::Mode::kReplay;
  };
  auto loss = [&] {
    ad::Tape tape;
    const auto text = model.encode_text(tape, space);
    replay.cursor = 0;
    return model.batch_loss(tape, text, images, labels, detached ? &replay : nullptr).value()[0];
  };
  return finite_diff_check_all(model.params(), analytic, loss, h, tol_rel);
}

}  // namespace attrprompt
