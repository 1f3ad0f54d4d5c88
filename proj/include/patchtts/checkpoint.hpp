#pragma once

// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "PTTSCKPT"
//   u32       format version (1)
//   u64       header length N
//   N bytes   JSON header {model_config, tokenizer, params: [{name, shape}], meta}
//   f32 blobs parameter values in ParamStore order

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "patchtts/model.hpp"
#include "patchtts/tokenizer.hpp"

namespace patchtts {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Writes to a temporary sibling then renames, so a crash never leaves a
/// truncated checkpoint under `path`.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const BpeTokenizer& tok,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  BpeTokenizer tokenizer;
  nlohmann::json meta;
};

/// Throws std::runtime_error on a missing/unreadable file and
/// std::invalid_argument on a malformed one.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to float32, the precision checkpoints store.
void round_to_f32(ParamStore& params);

}  // namespace patchtts
