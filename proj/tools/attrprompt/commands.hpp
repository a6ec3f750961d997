#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrprompt/error.hpp"
#include "attrprompt/model.hpp"

namespace attrprompt::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

int exit_code(ErrorKind kind);
// {"error": "<kind>", "message": "..."} on one line.
std::string error_line(std::string_view kind, std::string_view message);

// Settings shared by the commands that build a model.
struct RunOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> attributes;  // defaults to <data>/attributes.json
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> shots;
};

// defaults < config file < flags.
MapConfig resolve_config(const RunOptions& opts);

nlohmann::json cmd_train(const RunOptions& opts);
nlohmann::json cmd_base_to_novel(const RunOptions& opts);

struct EvalOptions {
  RunOptions run;
  std::filesystem::path checkpoint;
  std::string split = "test";     // train | test
  std::string head = "combined";  // combined | global | attribute
};
nlohmann::json cmd_eval(const EvalOptions& opts);

struct SinkhornCommand {
  std::filesystem::path cost;
  double gamma = 0.1;
  double tol = 1e-6;
  int max_iter = 100;
  int newton = 0;
  std::optional<std::filesystem::path> plan_out;  // CSV copy of the plan
};
nlohmann::json cmd_sinkhorn(const SinkhornCommand& opts);

struct GradcheckCommand {
  std::optional<std::filesystem::path> config;  // tiny reference config when absent
  std::uint64_t seed = 0;
  std::size_t classes = 3;
  double h = 1e-5;
  double tol = 1e-4;
};
nlohmann::json cmd_gradcheck(const GradcheckCommand& opts);

struct SynthCommand {
  std::optional<std::filesystem::path> spec;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};
nlohmann::json cmd_synth(const SynthCommand& opts);

double cmd_hm(double base, double novel);

// Parses a dense numeric CSV (comma separated, one row per line).
Tensor read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(const Tensor& m, const std::filesystem::path& path);

// Full CLI entry point; writes the JSON payload to `out` and errors to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace attrprompt::cli
