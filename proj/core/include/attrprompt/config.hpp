#pragma once

#include <filesystem>

#include <nlohmann/json_fwd.hpp>

#include "attrprompt/model.hpp"

namespace attrprompt {

// Flat JSON form of MapConfig. Every key is always emitted, so the output of
// config_to_json can be fed back unchanged.
nlohmann::json config_to_json(const MapConfig& config);

// Applies the keys of `doc` on top of `base`. Unknown keys, ill-typed values
// and failed constraints are all collected and reported in one kConfig error.
MapConfig config_from_json(const nlohmann::json& doc, const MapConfig& base = {});

MapConfig load_config(const std::filesystem::path& path, const MapConfig& base = {});

// Small model used by gradient checks: 3 classes, L = 2, 4 patches,
// M = N = 2, lambda = 3, 8-wide encoders.
MapConfig tiny_reference_config();

}  // namespace attrprompt
