#pragma once

#include <filesystem>
#include <optional>
#include <ostream>

#include <nlohmann/json_fwd.hpp>

#include "attrprompt/train.hpp"

namespace attrprompt {

// {"epoch", "loss", "train_acc"}
nlohmann::json epoch_record(const EpochStats& stats);

// {"test_acc"} plus base/novel/hm when the base-to-novel harness ran.
struct FinalMetrics {
  double test_acc = 0.0;
  std::optional<double> base_acc;
  std::optional<double> novel_acc;
  std::optional<double> hm;
};
nlohmann::json final_record(const FinalMetrics& metrics);

nlohmann::json to_json(const EvalReport& report);

// Appends one compact JSON object per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const nlohmann::json& record);

 private:
  std::filesystem::path path_;
};

}  // namespace attrprompt
