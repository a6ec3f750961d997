#include "attrprompt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attrprompt/error.hpp"

namespace attrprompt {
namespace {

std::size_t position_in(std::span<const std::size_t> space, std::size_t class_id) {
  auto it = std::find(space.begin(), space.end(), class_id);
  require(it != space.end(), ErrorKind::kInvalidArgument,
          "label " + std::to_string(class_id) + " is outside the label space");
  return static_cast<std::size_t>(it - space.begin());
}

std::vector<double> row_values(const ad::Var& v) { return v.value().data(); }

}  // namespace

void MapConfig::validate() const {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const char* msg) {
    if (!ok) bad.emplace_back(msg);
  };
  check(beta >= 0.0, "beta must be >= 0");
  check(tau > 0.0, "tau must be > 0");
  check(sinkhorn.gamma > 0.0, "gamma must be > 0");
  check(sinkhorn.max_iter >= 1, "sinkhorn_iters must be >= 1");
  check(sinkhorn.tol > 0.0, "sinkhorn_tol must be > 0");
  check(lambda >= 1, "lambda must be >= 1");
  check(n_textual_prompts >= 1, "n_textual_prompts must be >= 1");
  check(avae_key_dim >= 1, "avae_key_dim must be >= 1");
  check(lr >= 0.0, "lr must be >= 0");
  check(grad_clip >= 0.0, "grad_clip must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(init_std >= 0.0, "init_std must be >= 0");
  check(text.embed_dim == vision.embed_dim, "text and vision embed_dim must agree");
  check(text.heads >= 1 && text.width % text.heads == 0,
        "text_width must be divisible by text_heads");
  check(text.max_len > text.n_ctx, "text_max_len must exceed n_ctx");
  check(text.vocab_size >= 2, "text_vocab_size must be >= 2");
  check(vision.layers >= 1, "vision_layers must be >= 1");
  check(vision.n_prompts >= 1, "n_visual_prompts must be >= 1");
  check(vision.avae_layer >= 1 && vision.avae_layer <= vision.layers,
        "avae_layer must lie in 1..vision_layers");
  check(vision.heads >= 1 && vision.width % vision.heads == 0,
        "vision_width must be divisible by vision_heads");
  if (!bad.empty()) {
    std::string msg = "invalid configuration: ";
    for (std::size_t i = 0; i < bad.size(); ++i) msg += (i ? "; " : "") + bad[i];
    fail(ErrorKind::kConfig, msg);
  }
}

Tensor attribute_probability(const Tensor& psi, double tau) {
  return softmax_rows(psi.reshaped({1, psi.size()}), tau);
}

Tensor global_probability(const Tensor& f, std::span<const text::EncodedPromptSet> sets,
                          double tau) {
  const Tensor unit = l2_normalize(f);
  Tensor cos = Tensor::matrix(1, sets.size());
  for (std::size_t k = 0; k < sets.size(); ++k)
    cos[k] = dot(unit.data(), l2_normalize(sets[k].class_embedding).data());
  return softmax_rows(cos, tau);
}

Tensor combined_score(const Tensor& p_global, const Tensor& p_attr, double beta) {
  require(p_global.size() == p_attr.size(), ErrorKind::kInvalidArgument,
          "probability vectors differ in length");
  Tensor out = p_global;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += beta * p_attr[i];
  return out;
}

double classification_loss(const Tensor& combined, std::span<const std::size_t> labels) {
  require(!labels.empty() && labels.size() == combined.rows(), ErrorKind::kInvalidArgument,
          "one label per row is required");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < combined.cols(), ErrorKind::kInvalidArgument,
            "label " + std::to_string(labels[i]) + " out of range");
    total -= std::log(combined.at(i, labels[i]));
  }
  return total / static_cast<double>(labels.size());
}

double harmonic_mean(double base_acc, double novel_acc) {
  require(base_acc > 0.0 && base_acc <= 100.0 && novel_acc > 0.0 && novel_acc <= 100.0,
          ErrorKind::kInvalidArgument, "accuracies must lie in (0, 100]");
  return 2.0 * base_acc * novel_acc / (base_acc + novel_acc);
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

std::size_t Prediction::predicted(Head head) const {
  const auto& p = head == Head::kGlobal      ? p_global
                  : head == Head::kAttribute ? p_attr
                                             : p_combined;
  const auto it = std::max_element(p.begin(), p.end());
  return label_space[static_cast<std::size_t>(it - p.begin())];
}

ad::Var sinkhorn_unrolled(ad::Var similarity, const ot::Marginals& marginals, double gamma,
                          int iterations) {
  ad::Tape& tape = *similarity.tape();
  const std::size_t m = similarity.rows(), n = similarity.cols();
  marginals.validate(m, n);
  Tensor log_mu = Tensor::matrix(m, 1), log_nu = Tensor::matrix(1, n);
  for (std::size_t i = 0; i < m; ++i) log_mu[i] = std::log(marginals.mu[i]);
  for (std::size_t j = 0; j < n; ++j) log_nu[j] = std::log(marginals.nu[j]);
  ad::Var lmu = tape.constant(std::move(log_mu));
  ad::Var lnu = tape.constant(std::move(log_nu));

  ad::Var log_kernel = ad::scale(ad::add_scalar(similarity, -1.0), 1.0 / gamma);
  ad::Var g = tape.constant(Tensor::matrix(1, n));
  ad::Var f;
  for (int it = 0; it < std::max(1, iterations); ++it) {
    f = ad::sub(lmu, ad::logsumexp_rows(ad::add_row(log_kernel, g)));
    g = ad::sub(lnu, ad::transpose(ad::logsumexp_rows(ad::transpose(ad::add_col(log_kernel, f)))));
  }
  return ad::exp(ad::add_row(ad::add_col(log_kernel, f), g));
}

MapModel::MapModel(MapConfig config, std::vector<std::string> class_names,
                   const text::AttributeTable& attributes)
    : config_(std::move(config)),
      class_names_(std::move(class_names)),
      text_(config_.text),
      vision_(config_.vision) {
  config_.validate();
  require(!class_names_.empty(), ErrorKind::kInvalidArgument, "model needs at least one class");
  prompts_ = text::build_prompts(class_names_, attributes, config_.n_textual_prompts,
                                 text_.vocab(), config_.text);
  Rng rng(config_.seed);
  text_.init_params(params_, rng, config_.init_std);
  vision_.init_params(params_, rng, config_.init_std);
  avae::init_params(params_, rng,
                    {config_.vision.width, config_.vision.embed_dim, config_.avae_key_dim},
                    config_.init_std);
  if (config_.freeze_backbone) {
    params_.set_trainable_prefix("text.", false);
    params_.set_trainable_prefix("vision.", false);
    params_.get(text::TextEncoder::kContextParam).trainable = true;
    params_.get("vision.prompts").trainable = true;
  }
}

std::vector<std::size_t> MapModel::all_classes() const {
  std::vector<std::size_t> ids(num_classes());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

MapModel::TextState MapModel::encode_text(ad::Tape& tape,
                                          std::span<const std::size_t> label_space) const {
  require(!label_space.empty(), ErrorKind::kInvalidArgument, "empty label space");
  TextState ts;
  ts.label_space.assign(label_space.begin(), label_space.end());
  std::vector<ad::Var> rows;
  for (std::size_t id : ts.label_space) {
    require(id < num_classes(), ErrorKind::kInvalidArgument, "class id out of range");
    require(std::count(ts.label_space.begin(), ts.label_space.end(), id) == 1,
            ErrorKind::kInvalidArgument, "duplicate class in label space");
    std::vector<text::TextualAttributePrompt> subset;
    for (const auto& p : prompts_)
      if (p.class_id == id) subset.push_back(p);
    for (auto& p : subset) p.class_id = 0;
    auto sets = text_.encode_all(tape, params_, subset, 1);
    sets.front().class_id = id;
    ts.sets.push_back(sets.front());
    ts.values.push_back(text::to_values(sets.front()));
    rows.push_back(sets.front().rows);
  }
  ts.all_rows = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  return ts;
}

MapModel::TextState MapModel::constant_text(ad::Tape& tape, const TextState& source) {
  TextState ts;
  ts.label_space = source.label_space;
  ts.values = source.values;
  std::vector<ad::Var> rows;
  for (const auto& v : source.values) {
    text::PromptSetVars s;
    s.class_id = v.class_id;
    s.rows = tape.constant(v.rows);
    s.class_embedding = tape.constant(v.class_embedding);
    ts.sets.push_back(s);
    rows.push_back(s.rows);
  }
  ts.all_rows = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  return ts;
}

ImageForward MapModel::forward(ad::Tape& tape, const TextState& text, const Tensor& patches,
                               PlanReplay* replay) const {
  const auto& cfg = config_;
  ImageForward out;

  vision::Enhancer enhancer = [&](ad::Var prompts, ad::Var cls) {
    const Tensor cls_joint = vision_.project(tape, params_, cls).value();
    auto ranked = avae::rank_classes(cls_joint, text.values);
    ranked.resize(std::min(cfg.lambda, ranked.size()));
    std::vector<std::size_t> row_ids;
    for (std::size_t id : ranked) {
      const std::size_t pos = position_in(text.label_space, id);
      std::size_t offset = 0;
      for (std::size_t q = 0; q < pos; ++q) offset += text.values[q].rows.rows();
      for (std::size_t r = 0; r < text.values[pos].rows.rows(); ++r) row_ids.push_back(offset + r);
    }
    out.candidates = ranked;
    return avae::enhance(tape, params_, prompts, ad::gather_rows(text.all_rows, row_ids));
  };
  const auto enc =
      vision_.encode_image(tape, params_, patches, cfg.use_avae ? &enhancer : nullptr);

  std::vector<ad::Var> class_rows, psis;
  for (const auto& s : text.sets) class_rows.push_back(s.class_embedding);
  ad::Var class_matrix = class_rows.size() == 1 ? class_rows.front() : ad::concat_rows(class_rows);
  out.p_global =
      ad::softmax_rows(ad::matmul(enc.global, ad::transpose(class_matrix)), cfg.tau);

  for (const auto& s : text.sets) {
    ad::Var sim = ad::matmul(enc.prompts, ad::transpose(s.rows));
    ot::CostMatrix cost{sim.value()};
    for (double& x : cost.cost.data()) x = 1.0 - x;
    const auto marginals = ot::Marginals::uniform(sim.rows(), sim.cols());
    ad::Var plan;
    if (replay != nullptr && replay->mode == PlanReplay::Mode::kReplay) {
      require(replay->cursor < replay->plans.size(), ErrorKind::kState,
              "plan replay exhausted");
      plan = tape.constant(replay->plans[replay->cursor++]);
    } else {
      ot::TransportPlan solved = ot::sinkhorn(cost, marginals, cfg.sinkhorn);
      plan = cfg.unroll_sinkhorn
                 ? sinkhorn_unrolled(sim, marginals, cfg.sinkhorn.gamma, solved.iterations_used)
                 : tape.constant(solved.plan);
      if (replay != nullptr) replay->plans.push_back(plan.value());
      out.plans.push_back(std::move(solved));
    }
    psis.push_back(ad::sum(ad::mul(sim, plan)));
  }
  out.psi = psis.size() == 1 ? psis.front() : ad::concat_cols(psis);
  out.p_attr = ad::softmax_rows(out.psi, cfg.tau);
  out.p_combined = ad::add(out.p_global, ad::scale(out.p_attr, cfg.beta));
  return out;
}

ad::Var MapModel::batch_loss(ad::Tape& tape, const TextState& text,
                             std::span<const Tensor> images, std::span<const std::size_t> labels,
                             PlanReplay* replay, std::vector<ImageForward>* forwards) const {
  require(!images.empty() && images.size() == labels.size(), ErrorKind::kInvalidArgument,
          "batch needs one label per image");
  ad::Var total;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t pos = position_in(text.label_space, labels[i]);
    ImageForward fw = forward(tape, text, images[i], replay);
    ad::Var nll = ad::log(ad::pick(fw.p_combined, 0, pos));
    total = total.valid() ? ad::add(total, nll) : nll;
    if (forwards != nullptr) forwards->push_back(std::move(fw));
  }
  return ad::scale(total, -1.0 / static_cast<double>(images.size()));
}

std::vector<Prediction> MapModel::predict(std::span<const Tensor> images,
                                          std::span<const std::size_t> label_space) const {
  ad::Tape text_tape;
  const TextState text = encode_text(text_tape, label_space);
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    ad::Tape tape;
    const TextState constant = constant_text(tape, text);
    ImageForward fw = forward(tape, constant, img);
    Prediction p;
    p.label_space = text.label_space;
    p.p_global = row_values(fw.p_global);
    p.p_attr = row_values(fw.p_attr);
    p.p_combined = row_values(fw.p_combined);
    p.plans = std::move(fw.plans);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace attrprompt
