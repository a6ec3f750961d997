#pragma once

#include <filesystem>

#include "attrprompt/param_store.hpp"

namespace attrprompt {

// Checkpoint layout inside `dir`:
//   manifest.json  {"format_version": 1, "step_count": n,
//                   "params": [{"name", "shape", "dtype": "f64", "offset"}...]}
//   params.bin     little-endian IEEE-754 binary64 values, concatenated in
//                  manifest order; "offset" is a byte offset into this file.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& dir);

// Restores values into an existing store whose names and shapes must match.
void load_checkpoint(ParamStore& store, const std::filesystem::path& dir);

// Builds a fresh store from the checkpoint alone.
ParamStore read_checkpoint(const std::filesystem::path& dir);

}  // namespace attrprompt
