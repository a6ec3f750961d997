// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "attrprompt/config.hpp"
#include "attrprompt/data.hpp"
#include "attrprompt/model.hpp"
#include "attrprompt/ot.hpp"
#include "attrprompt/train.hpp"
#include "commands.hpp"

namespace fs = std::filesystem;
using namespace attrprompt;

namespace {

// Attribute-head test accuracy of the first verified run of criterion 8
// (seed-0 default benchmark, default config), pinned to +-2 points.
constexpr double kAttrHeadReference = 0.484375;
constexpr double kAttrHeadBand = 0.02;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %d %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor uniform_matrix(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t = Tensor::matrix(r, c);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

Tensor normal_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::matrix(r, c);
  for (double& x : t.data()) x = rng.normal(0.0, 1.0);
  return t;
}

Outcome hm_arithmetic() {
  struct Row {
    double base, novel, hm;
  };
  const Row rows[] = {{69.34, 74.22, 71.70}, {82.69, 63.22, 71.66}, {80.47, 71.69, 75.83},
                      {82.63, 66.23, 73.53}};
  std::string detail;
  bool ok = true;
  for (const auto& r : rows) {
    const double got = round2(harmonic_mean(r.base, r.novel));
    ok = ok && got == r.hm;
    detail += fmt("(%.2f,%.2f)->%.2f ", r.base, r.novel, got);
  }
  return {ok, detail};
}

Outcome headline_numbers_documented() {
  std::ifstream in(fs::path(ATTRPROMPT_SOURCE_DIR) / "README.md");
  const std::string text{std::istreambuf_iterator<char>(in), {}};
  const bool ok = text.find("not reproducible") != std::string::npos;
  return {ok, ok ? "README states that the published benchmark numbers are not reproducible at "
                   "desk scale; properties 3-10 stand in for them"
                 : "README lacks the non-reproducibility statement"};
}

Outcome sinkhorn_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(3);
  double worst_violation = 0.0, worst_mass = 0.0, min_entry = INFINITY;
  for (int i = 0; i < 100; ++i) {
    const ot::CostMatrix c{uniform_matrix(rng, 4, 4, 0.0, 2.0)};
    const auto t = ot::sinkhorn(c, ot::Marginals::uniform(4, 4), {0.1, 1000000, 1e-9});
    worst_violation = std::max(worst_violation, t.marginal_violation);
    double mass = 0.0;
    for (double x : t.plan.data()) {
      mass += x;
      min_entry = std::min(min_entry, x);
    }
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
  }
  const double secs = seconds_since(t0);
  return {worst_violation <= 1e-9 && worst_mass <= 1e-9 && min_entry >= 0.0 && secs < 1.0,
          fmt("max violation %.3g, max |sum-1| %.3g, min entry %.3g, %.3fs", worst_violation,
              worst_mass, min_entry, secs)};
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(4);
  double worst_gap = 0.0, worst_below = -INFINITY;
  for (int i = 0; i < 20; ++i) {
    const ot::CostMatrix c{uniform_matrix(rng, 3, 3, 0.0, 2.0)};
    const auto t = ot::sinkhorn(c, ot::Marginals::uniform(3, 3), {0.01, 20000, 1e-9, 50});
    const double opt = ot::exact_assignment_oracle(c).cost;
    const double got = ot::transport_cost(t, c);
    worst_gap = std::max(worst_gap, std::abs(got - opt));
    worst_below = std::max(worst_below, opt - got);
  }
  const double secs = seconds_since(t0);
  return {worst_gap <= 5e-2 && worst_below <= 1e-9 && secs < 1.0,
          fmt("max |<T,C>-opt| %.4f, max (opt-<T,C>) %.3g, %.3fs", worst_gap, worst_below, secs)};
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const MapConfig cfg = tiny_reference_config();
  const auto problem = make_gradcheck_problem(cfg, 3, 0);
  MapModel model(cfg, problem.class_names, problem.attributes);
  const auto reports = check_model_gradients(model, problem.images, problem.labels, 1e-5, 1e-4);
  double worst = 0.0;
  bool ok = true;
  std::string worst_name;
  bool saw_avae = false;
  for (const auto& r : reports) {
    ok = ok && r.pass;
    if (r.param_name.rfind("avae.", 0) == 0) saw_avae = true;
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      worst_name = r.param_name;
    }
  }
  const double secs = seconds_since(t0);
  return {ok && saw_avae && secs < 60.0,
          fmt("%.0f groups, max rel err %.3g (", static_cast<double>(reports.size()), worst) +
              worst_name + fmt("), %.1fs", secs)};
}

Outcome identity_degenerations() {
  const MapConfig cfg = tiny_reference_config();
  const auto problem = make_gradcheck_problem(cfg, 3, 0);

  MapModel model(cfg, problem.class_names, problem.attributes);
  for (double& x : model.params().get(avae::kValueParam).value.data()) x = 0.0;
  const auto space = model.all_classes();
  const auto with = model.predict(problem.images, space);
  model.mutable_config().use_avae = false;
  const auto without = model.predict(problem.images, space);
  bool a = true;
  for (std::size_t i = 0; i < with.size(); ++i)
    a = a && with[i].p_global == without[i].p_global && with[i].p_attr == without[i].p_attr;

  MapModel beta0(cfg, problem.class_names, problem.attributes);
  beta0.mutable_config().beta = 0.0;
  bool b = true;
  for (const auto& p : beta0.predict(problem.images, space))
    b = b && p.p_combined == p.p_global && p.predicted(Head::kCombined) == p.predicted(Head::kGlobal);

  MapConfig one = cfg;
  one.n_textual_prompts = 1;
  MapModel single(one, problem.class_names, problem.attributes);
  ad::Tape tape;
  bool c = true;
  const auto text = single.encode_text(tape, single.all_classes());
  for (const auto& s : text.values)
    c = c && s.rows.rows() == 1 && s.class_embedding == s.rows;

  return {a && b && c, std::string("(a) W_V=0 vs no AVAE ") + (a ? "bitwise equal" : "DIFFER") +
                           ", (b) beta=0 vs global head " + (b ? "bitwise equal" : "DIFFER") +
                           ", (c) N=1 class embedding " + (c ? "equals its row" : "DIFFERS")};
}

Outcome learning_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  data::SynthSpec spec;
  spec.classes = 2;
  spec.num_base = 2;
  const auto synth = data::synthesize(spec);
  MapConfig cfg;
  cfg.epochs = 200;
  const auto& man = synth.dataset.manifest;
  const auto base = man.classes(data::Partition::kBase);
  const auto idx = data::kshot_sample(man, cfg.shots, cfg.seed);
  MapModel model(cfg, man.class_names, synth.attributes);
  const auto report = train(model, synth.dataset, idx, base);

  std::size_t first_hit = 0, non_monotone = 0;
  double best_acc = 0.0;
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const auto& s = report.epochs[e];
    best_acc = std::max(best_acc, s.train_acc);
    if (first_hit == 0 && s.train_acc >= 0.95) first_hit = s.epoch;
    if (e > 0 && s.loss > report.epochs[e - 1].loss) ++non_monotone;
  }
  const double final_loss = report.epochs.back().loss;
  const double secs = seconds_since(t0);
  const bool ok = first_hit > 0 && final_loss >= -std::log(2.0) - 1e-9 && non_monotone <= 5 &&
                  secs < 300.0;
  return {ok, fmt("train acc >= 0.95 first at epoch %.0f (final %.4f), final loss %.4f, "
                  "%.0f non-monotone epochs",
                  static_cast<double>(first_hit), report.epochs.back().train_acc, final_loss,
                  static_cast<double>(non_monotone)) +
                  fmt(", %.1fs", secs)};
}

Outcome attribute_head_signal() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto synth = data::synthesize(data::SynthSpec{});
  const MapConfig cfg;
  const auto& man = synth.dataset.manifest;
  const auto base = man.classes(data::Partition::kBase);
  const auto idx = data::kshot_sample(man, cfg.shots, cfg.seed);
  MapModel model(cfg, man.class_names, synth.attributes);
  train(model, synth.dataset, idx, base);
  const auto test = man.indices(data::Split::kTest, base);
  const double acc = evaluate(model, synth.dataset, test, base, Head::kAttribute).accuracy;
  const double chance = 1.0 / static_cast<double>(base.size());
  const double secs = seconds_since(t0);
  const bool ok = acc > chance + 0.10 && std::abs(acc - kAttrHeadReference) <= kAttrHeadBand + 1e-12 &&
                  secs < 300.0;
  return {ok, fmt("P_a base test acc %.4f, chance+10pp %.4f, reference %.4f +- %.2f", acc,
                  chance + 0.10, kAttrHeadReference, kAttrHeadBand) +
                  fmt(", %.1fs", secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("attrprompt_acceptance_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  fs::remove_all(root);
  fs::create_directories(root);
  data::synth_generate(data::SynthSpec{}, root / "data");
  std::ofstream(root / "config.json") << config_to_json([] {
    MapConfig c;
    c.epochs = 3;
    return c;
  }()).dump();
  auto run_once = [&](const char* name) {
    cli::RunOptions o;
    o.config = root / "config.json";
    o.data = root / "data";
    o.out = root / name;
    o.seed = 0;
    cli::cmd_train(o);
  };
  run_once("a");
  run_once("b");
  std::size_t compared = 0;
  bool same = true;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "a");
    same = same && slurp(entry.path()) == slurp(root / "b" / rel);
    ++compared;
  }
  fs::remove_all(root);
  return {same && compared >= 4,
          fmt("%.0f files compared (metrics.jsonl, config.json, checkpoint), ",
              static_cast<double>(compared)) +
              (same ? "byte-identical" : "DIFFER")};
}

Outcome permutation_invariance() {
  Rng rng(10);
  double worst = 0.0;
  const ot::SinkhornOptions opt{0.1, 1000, 1e-9};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.below(5), n = 2 + rng.below(5);
    const Tensor f = normal_matrix(rng, m, 8), g = normal_matrix(rng, n, 8);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    Tensor fp = Tensor::matrix(m, 8);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < 8; ++j) fp.at(i, j) = f.at(perm[i], j);
    worst = std::max(worst, std::abs(ot::attribute_similarity(f, g, opt).psi -
                                     ot::attribute_similarity(fp, g, opt).psi));
  }
  return {worst <= 1e-10, fmt("max |psi - psi_perm| %.3g over 50 trials", worst)};
}

}  // namespace

int main() {
  report(1, "hm-arithmetic", hm_arithmetic);
  report(2, "headline-numbers-not-reproduced", headline_numbers_documented);
  report(3, "sinkhorn-properties", sinkhorn_properties);
  report(4, "oracle-equivalence", oracle_equivalence);
  report(5, "gradient-correctness", gradient_correctness);
  report(6, "identity-degenerations", identity_degenerations);
  report(7, "learning-sanity", learning_sanity);
  report(8, "attribute-head-signal", attribute_head_signal);
  report(9, "determinism", determinism);
  report(10, "permutation-invariance", permutation_invariance);
  return failures == 0 ? 0 : 1;
}
