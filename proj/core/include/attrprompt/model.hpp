#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attrprompt/autodiff.hpp"
#include "attrprompt/avae.hpp"
#include "attrprompt/ot.hpp"
#include "attrprompt/param_store.hpp"
#include "attrprompt/text_encoder.hpp"
#include "attrprompt/vision_encoder.hpp"

namespace attrprompt {

struct MapConfig {
  text::TextEncoderConfig text;
  vision::VitConfig vision;
  std::size_t n_textual_prompts = 4;  // N
  std::size_t lambda = 10;
  std::size_t avae_key_dim = 32;      // d_K
  bool use_avae = true;
  double beta = 1.0;
  double tau = 0.07;
  ot::SinkhornOptions sinkhorn{0.1, 100, 1e-6};
  // Differentiate through the Sinkhorn iterations instead of treating the
  // plan as a constant.
  bool unroll_sinkhorn = false;
  // Normal std for every learnable tensor. 0.02 shrinks each width-32 map
  // about ninefold, which leaves image features nearly input-independent.
  double init_std = 0.1;
  // Train only the context vectors, visual prompts and AVAE projections.
  bool freeze_backbone = false;

  double lr = 0.002;
  // Rescale the global gradient norm to at most this value before each SGD
  // step; 0 disables clipping.
  double grad_clip = 1.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t shots = 16;  // per base class; 0 trains on every train sample
  std::uint64_t seed = 0;

  // Throws kConfig listing every violated constraint.
  void validate() const;
};

// P_a: softmax over psi(F, G_i) / tau.
Tensor attribute_probability(const Tensor& psi, double tau);
// P_g: softmax over cos(f, g_bar_i) / tau. Returns 1 x C.
Tensor global_probability(const Tensor& f, std::span<const text::EncodedPromptSet> sets,
                          double tau);
// P = P_g + beta P_a, deliberately left unnormalized (sums to 1 + beta).
Tensor combined_score(const Tensor& p_global, const Tensor& p_attr, double beta);
// -(1/B) sum_i log P_i(y_i) over rows of combined scores.
double classification_loss(const Tensor& combined, std::span<const std::size_t> labels);

// Percent-valued harmonic mean 2ab / (a + b); inputs in (0, 100].
double harmonic_mean(double base_acc, double novel_acc);
// Two-decimal display rounding.
double round2(double x);

// Transport plans keyed by forward order. Recording then replaying pins the
// plans, which makes finite differences see the same plan-detached function
// the analytic gradient differentiates.
struct PlanReplay {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<Tensor> plans;
  std::size_t cursor = 0;
};

enum class Head { kCombined, kGlobal, kAttribute };

struct ImageForward {
  ad::Var p_global;    // 1 x C'
  ad::Var p_attr;      // 1 x C'
  ad::Var p_combined;  // 1 x C'
  ad::Var psi;         // 1 x C'
  std::vector<ot::TransportPlan> plans;
  std::vector<std::size_t> candidates;
};

// Per-image prediction over a label space (a list of class ids).
struct Prediction {
  std::vector<std::size_t> label_space;
  std::vector<double> p_global;
  std::vector<double> p_attr;
  std::vector<double> p_combined;
  std::vector<ot::TransportPlan> plans;

  // Class id of the argmax of the chosen head (first maximum wins).
  std::size_t predicted(Head head = Head::kCombined) const;
};

class MapModel {
 public:
  MapModel(MapConfig config, std::vector<std::string> class_names,
           const text::AttributeTable& attributes);

  const MapConfig& config() const noexcept { return config_; }
  MapConfig& mutable_config() noexcept { return config_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  const text::TextEncoder& text_encoder() const noexcept { return text_; }
  const vision::VisionEncoder& vision_encoder() const noexcept { return vision_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::size_t num_classes() const noexcept { return class_names_.size(); }
  const std::vector<text::TextualAttributePrompt>& prompts() const noexcept { return prompts_; }
  std::vector<std::size_t> all_classes() const;

  // Encoded prompt sets for the given label space, in label-space order.
  struct TextState {
    std::vector<std::size_t> label_space;
    std::vector<text::PromptSetVars> sets;
    std::vector<text::EncodedPromptSet> values;
    ad::Var all_rows;  // sets' rows stacked in label-space order
  };

  TextState encode_text(ad::Tape& tape, std::span<const std::size_t> label_space) const;
  // The same state with the prompt tensors entered as constants.
  static TextState constant_text(ad::Tape& tape, const TextState& source);

  ImageForward forward(ad::Tape& tape, const TextState& text, const Tensor& patches,
                       PlanReplay* replay = nullptr) const;

  // Mean combined-score cross-entropy over a batch; labels are class ids that
  // must belong to the text state's label space.
  ad::Var batch_loss(ad::Tape& tape, const TextState& text, std::span<const Tensor> images,
                     std::span<const std::size_t> labels, PlanReplay* replay = nullptr,
                     std::vector<ImageForward>* forwards = nullptr) const;

  std::vector<Prediction> predict(std::span<const Tensor> images,
                                  std::span<const std::size_t> label_space) const;

 private:
  MapConfig config_;
  std::vector<std::string> class_names_;
  text::TextEncoder text_;
  vision::VisionEncoder vision_;
  std::vector<text::TextualAttributePrompt> prompts_;
  ParamStore params_;
};

// Differentiable log-domain Sinkhorn on a cosine-similarity matrix; runs the
// given number of alternating sweeps from V(0) = 1 and returns the plan.
ad::Var sinkhorn_unrolled(ad::Var similarity, const ot::Marginals& marginals, double gamma,
                          int iterations);

}  // namespace attrprompt
