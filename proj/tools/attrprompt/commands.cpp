#include "commands.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "attrprompt/checkpoint.hpp"
#include "attrprompt/config.hpp"
#include "attrprompt/data.hpp"
#include "attrprompt/metrics.hpp"
#include "attrprompt/ot.hpp"
#include "attrprompt/train.hpp"

namespace attrprompt::cli {
namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kUnsupported:
    case ErrorKind::kConfig:
      return kUsage;
    case ErrorKind::kInsufficientAttributes:
    case ErrorKind::kInsufficientSamples:
    case ErrorKind::kCorruptDataset:
    case ErrorKind::kInvalidManifest:
    case ErrorKind::kIo:
      return kData;
    case ErrorKind::kDegenerateVector:
    case ErrorKind::kNumericFailure:
    case ErrorKind::kState:
      return kNumeric;
  }
  return kNumeric;
}

std::string error_line(std::string_view kind, std::string_view message) {
  return json{{"error", kind}, {"message", message}}.dump();
}

MapConfig resolve_config(const RunOptions& opts) {
  MapConfig cfg = opts.config ? load_config(*opts.config) : MapConfig{};
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.epochs) cfg.epochs = *opts.epochs;
  if (opts.shots) cfg.shots = *opts.shots;
  cfg.validate();
  return cfg;
}

namespace {

struct Run {
  MapConfig cfg;
  data::Dataset dataset;
  text::AttributeTable attributes;
};

Run load_run(const RunOptions& opts) {
  require(opts.data.has_value(), ErrorKind::kConfig, "--data is required");
  Run r;
  r.cfg = resolve_config(opts);
  r.dataset = data::load_dataset(*opts.data);
  const fs::path attr_path = opts.attributes ? *opts.attributes : *opts.data / "attributes.json";
  require(fs::exists(attr_path), ErrorKind::kIo,
          "attributes file not found: " + attr_path.string());
  r.attributes = text::load_attributes(attr_path);
  const auto& man = r.dataset.manifest;
  require(man.patch_dim == r.cfg.vision.width, ErrorKind::kConfig,
          "dataset patch_dim " + std::to_string(man.patch_dim) + " does not match vision_width " +
              std::to_string(r.cfg.vision.width));
  require(man.tokens_per_image == r.cfg.vision.tokens_per_image, ErrorKind::kConfig,
          "dataset tokens_per_image " + std::to_string(man.tokens_per_image) +
              " does not match config tokens_per_image " +
              std::to_string(r.cfg.vision.tokens_per_image));
  return r;
}

std::vector<std::size_t> training_indices(const Run& r) {
  const auto& man = r.dataset.manifest;
  if (r.cfg.shots > 0) return data::kshot_sample(man, r.cfg.shots, r.cfg.seed);
  return man.indices(data::Split::kTrain, man.classes(data::Partition::kBase));
}

fs::path require_out(const RunOptions& opts) {
  require(opts.out.has_value(), ErrorKind::kConfig, "--out is required");
  fs::create_directories(*opts.out);
  return *opts.out;
}

struct Trained {
  MapModel model;
  TrainReport report;
};

// Trains on base classes and writes config.json, metrics.jsonl (epoch lines
// only; the caller appends the final line) and the checkpoint.
Trained train_run(const Run& r, const fs::path& out, JsonlWriter& metrics) {
  const auto base = r.dataset.manifest.classes(data::Partition::kBase);
  require(!base.empty(), ErrorKind::kInvalidManifest, "dataset declares no base classes");
  MapModel model(r.cfg, r.dataset.manifest.class_names, r.attributes);
  const auto idx = training_indices(r);
  {
    std::ofstream cfg_out(out / "config.json");
    cfg_out << config_to_json(r.cfg).dump(2) << "\n";
  }
  auto report = train(model, r.dataset, idx, base,
                      [&](const EpochStats& s) { metrics.write(epoch_record(s)); });
  save_checkpoint(model.params(), out / "checkpoint");
  return {std::move(model), std::move(report)};
}

json train_summary(const fs::path& out, const TrainReport& report) {
  json j{{"checkpoint", (out / "checkpoint").string()},
         {"metrics", (out / "metrics.jsonl").string()},
         {"epochs", report.epochs.size()}};
  if (!report.epochs.empty()) {
    j["final_loss"] = report.epochs.back().loss;
    j["train_acc"] = report.epochs.back().train_acc;
  }
  return j;
}

}  // namespace

json cmd_train(const RunOptions& opts) {
  Run r = load_run(opts);
  const fs::path out = require_out(opts);
  JsonlWriter metrics(out / "metrics.jsonl");
  auto t = train_run(r, out, metrics);
  const auto& man = r.dataset.manifest;
  const auto base = man.classes(data::Partition::kBase);
  FinalMetrics fm;
  fm.test_acc = evaluate(t.model, r.dataset, man.indices(data::Split::kTest, base), base).accuracy;
  metrics.write(final_record(fm));
  json j = train_summary(out, t.report);
  j["test_acc"] = fm.test_acc;
  return j;
}

json cmd_base_to_novel(const RunOptions& opts) {
  Run r = load_run(opts);
  const auto& man = r.dataset.manifest;
  const auto base = man.classes(data::Partition::kBase);
  const auto novel = man.classes(data::Partition::kNovel);
  require(!novel.empty(), ErrorKind::kInvalidManifest,
          "dataset declares no novel classes; base-to-novel needs both partitions");
  const fs::path out = require_out(opts);
  JsonlWriter metrics(out / "metrics.jsonl");
  auto t = train_run(r, out, metrics);

  const auto all = t.model.all_classes();
  FinalMetrics fm;
  fm.test_acc = evaluate(t.model, r.dataset, man.indices(data::Split::kTest, all), all).accuracy;
  const double base_acc =
      evaluate(t.model, r.dataset, man.indices(data::Split::kTest, base), base).accuracy;
  const double novel_acc =
      evaluate(t.model, r.dataset, man.indices(data::Split::kTest, novel), novel).accuracy;
  fm.base_acc = 100.0 * base_acc;
  fm.novel_acc = 100.0 * novel_acc;
  // HM is undefined at zero accuracy; report 0 as the limit.
  fm.hm = (base_acc > 0.0 && novel_acc > 0.0) ? harmonic_mean(*fm.base_acc, *fm.novel_acc) : 0.0;
  metrics.write(final_record(fm));

  json j = train_summary(out, t.report);
  j["test_acc"] = fm.test_acc;
  j["base_acc"] = *fm.base_acc;
  j["novel_acc"] = *fm.novel_acc;
  j["hm"] = *fm.hm;
  return j;
}

json cmd_eval(const EvalOptions& opts) {
  Run r = load_run(opts.run);
  MapModel model(r.cfg, r.dataset.manifest.class_names, r.attributes);
  load_checkpoint(model.params(), opts.checkpoint);
  const auto& man = r.dataset.manifest;
  require(opts.split == "train" || opts.split == "test", ErrorKind::kInvalidArgument,
          "split must be train or test, got '" + opts.split + "'");
  Head head = Head::kCombined;
  if (opts.head == "global") {
    head = Head::kGlobal;
  } else if (opts.head == "attribute") {
    head = Head::kAttribute;
  } else {
    require(opts.head == "combined", ErrorKind::kInvalidArgument,
            "head must be combined, global or attribute, got '" + opts.head + "'");
  }
  const auto all = model.all_classes();
  const auto split = opts.split == "train" ? data::Split::kTrain : data::Split::kTest;
  return to_json(evaluate(model, r.dataset, man.indices(split, all), all, head));
}

Tensor read_csv_matrix(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      const std::string trimmed =
          first == std::string::npos ? std::string{} : cell.substr(first, last - first + 1);
      double v = 0.0;
      const auto [end, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), v);
      require(ec == std::errc{} && end == trimmed.data() + trimmed.size() && !trimmed.empty(),
              ErrorKind::kCorruptDataset,
              path.string() + ":" + std::to_string(lineno) + ": not a number: '" + trimmed + "'");
      row.push_back(v);
    }
    require(rows.empty() || row.size() == rows.front().size(), ErrorKind::kCorruptDataset,
            path.string() + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::kCorruptDataset, path.string() + ": empty matrix");
  Tensor m = Tensor::matrix(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
  return m;
}

void write_csv_matrix(const Tensor& m, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m.at(i, j);
    out << "\n";
  }
}

json cmd_sinkhorn(const SinkhornCommand& opts) {
  ot::CostMatrix cost{read_csv_matrix(opts.cost)};
  const auto marginals = ot::Marginals::uniform(cost.cost.rows(), cost.cost.cols());
  const auto plan = ot::sinkhorn(cost, marginals, {opts.gamma, opts.max_iter, opts.tol, opts.newton});
  if (opts.plan_out) write_csv_matrix(plan.plan, *opts.plan_out);
  json rows = json::array();
  for (std::size_t i = 0; i < plan.plan.rows(); ++i) {
    const auto r = plan.plan.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"plan", rows},
          {"gamma", plan.gamma},
          {"iterations_used", plan.iterations_used},
          {"newton_steps_used", plan.newton_steps_used},
          {"marginal_violation", plan.marginal_violation},
          {"converged", plan.converged(opts.tol)},
          {"log_domain", plan.log_domain},
          {"transport_cost", ot::transport_cost(plan, cost)}};
}

json cmd_gradcheck(const GradcheckCommand& opts) {
  MapConfig cfg = opts.config ? load_config(*opts.config, tiny_reference_config())
                              : tiny_reference_config();
  cfg.seed = opts.seed;
  auto problem = make_gradcheck_problem(cfg, opts.classes, opts.seed);
  MapModel model(cfg, problem.class_names, problem.attributes);
  const auto reports = check_model_gradients(model, problem.images, problem.labels, opts.h, opts.tol);
  double worst = 0.0;
  bool pass = true;
  std::size_t checked = 0;
  json groups = json::array();
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_err);
    pass = pass && r.pass;
    checked += r.checked;
    groups.push_back({{"name", r.param_name}, {"max_rel_err", r.max_rel_err},
                      {"checked", r.checked}, {"pass", r.pass}});
  }
  return {{"max_rel_err", worst}, {"pass", pass},     {"tol", opts.tol},
          {"h", opts.h},          {"checked", checked}, {"groups", groups}};
}

json cmd_synth(const SynthCommand& opts) {
  data::SynthSpec spec;
  if (opts.spec) {
    std::ifstream in(*opts.spec);
    require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + opts.spec->string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, opts.spec->string() + ": " + e.what());
    }
    spec = data::synth_spec_from_json(doc);
  }
  if (opts.seed) spec.seed = *opts.seed;
  const auto result = data::synth_generate(spec, opts.out);
  return {{"out", opts.out.string()},
          {"num_samples", result.dataset.manifest.num_samples},
          {"classes", result.dataset.manifest.num_classes()},
          {"spec", data::to_json(spec)}};
}

double cmd_hm(double base, double novel) { return round2(harmonic_mean(base, novel)); }

namespace {

void add_run_options(CLI::App* sub, RunOptions& o) {
  sub->add_option("--config", o.config, "JSON config file");
  sub->add_option("--data", o.data, "dataset directory");
  sub->add_option("--attributes", o.attributes, "attributes.json (default <data>/attributes.json)");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--seed", o.seed, "override the config seed");
  sub->add_option("--epochs", o.epochs, "override the config epoch count");
  sub->add_option("--shots", o.shots, "samples per base class (0 = all)");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribute-prompted few-shot classifier toolkit", "attrprompt"};
  app.require_subcommand(1);

  RunOptions train_opts, b2n_opts;
  bool train_print = false, b2n_print = false;
  auto* train_cmd = app.add_subcommand("train", "train on base classes; write checkpoint + metrics");
  add_run_options(train_cmd, train_opts);
  train_cmd->add_flag("--print-config", train_print, "print the resolved config and exit");

  auto* b2n_cmd = app.add_subcommand("base-to-novel", "train on base, evaluate base and novel");
  add_run_options(b2n_cmd, b2n_opts);
  b2n_cmd->add_flag("--print-config", b2n_print, "print the resolved config and exit");

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_run_options(eval_cmd, eval_opts.run);
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--split", eval_opts.split, "train or test");
  eval_cmd->add_option("--head", eval_opts.head, "combined, global or attribute");

  SinkhornCommand sk;
  auto* sk_cmd = app.add_subcommand("sinkhorn", "entropic OT plan for a CSV cost matrix");
  sk_cmd->add_option("--cost", sk.cost, "CSV cost matrix")->required();
  sk_cmd->add_option("--gamma", sk.gamma, "entropic regularization");
  sk_cmd->add_option("--tol", sk.tol, "marginal tolerance");
  sk_cmd->add_option("--max-iter", sk.max_iter, "iteration cap");
  sk_cmd->add_option("--newton", sk.newton, "Newton refinement steps if the sweeps stop short");
  sk_cmd->add_option("--plan-out", sk.plan_out, "also write the plan as CSV");

  GradcheckCommand gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  gc_cmd->add_option("--config", gc.config, "config overriding the tiny reference model");
  gc_cmd->add_option("--seed", gc.seed, "model and problem seed");
  gc_cmd->add_option("--classes", gc.classes, "number of classes");
  gc_cmd->add_option("--step", gc.h, "central-difference step h");
  gc_cmd->add_option("--tol", gc.tol, "relative error tolerance");

  SynthCommand sy;
  auto* sy_cmd = app.add_subcommand("synth", "generate the synthetic attribute-grid dataset");
  sy_cmd->add_option("--spec", sy.spec, "JSON synthesis spec");
  sy_cmd->add_option("--out", sy.out, "output directory")->required();
  sy_cmd->add_option("--seed", sy.seed, "override the spec seed");

  double hm_base = 0.0, hm_novel = 0.0;
  auto* hm_cmd = app.add_subcommand("hm", "harmonic mean of base and novel accuracy (percent)");
  hm_cmd->add_option("base", hm_base, "base accuracy")->required();
  hm_cmd->add_option("novel", hm_novel, "novel accuracy")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << "\n";
    return kUsage;
  }

  try {
    json payload;
    int code = kOk;
    if (*train_cmd) {
      payload = train_print ? config_to_json(resolve_config(train_opts)) : cmd_train(train_opts);
    } else if (*b2n_cmd) {
      payload = b2n_print ? config_to_json(resolve_config(b2n_opts)) : cmd_base_to_novel(b2n_opts);
    } else if (*eval_cmd) {
      payload = cmd_eval(eval_opts);
    } else if (*sk_cmd) {
      payload = cmd_sinkhorn(sk);
    } else if (*gc_cmd) {
      payload = cmd_gradcheck(gc);
      if (!payload.at("pass").get<bool>()) code = kNumeric;
    } else if (*sy_cmd) {
      payload = cmd_synth(sy);
    } else if (*hm_cmd) {
      payload = cmd_hm(hm_base, hm_novel);
    }
    out << payload.dump() << "\n";
    return code;
  } catch (const Error& e) {
    err << error_line(to_string(e.kind()), e.what()) << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << error_line("config", e.what()) << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << error_line("io", e.what()) << "\n";
    return kData;
  }
}

}  // namespace attrprompt::cli
