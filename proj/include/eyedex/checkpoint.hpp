#pragma once

// Checkpoint container, little-endian throughout:
//
//   "EYDX"                      4-byte magic
//   u16 version = 1
//   u32 metadata length, then that many bytes of UTF-8 JSON
//   repeated until end of file, one record per parameter in layer order:
//     u32 name length, UTF-8 name
//     u32 rank, rank x u64 dims
//     u8 dtype tag (0 = f32, 1 = f64)
//     raw values
//
// The JSON block carries the architecture, head configuration, class names,
// per-layer trainability, epoch, and validation metric.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"

#include "eyedex/model.hpp"

namespace eyedex {

inline constexpr char kCheckpointMagic[4] = {'E', 'Y', 'D', 'X'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::size_t epoch = 0;
  std::optional<double> val_metric;
  nlohmann::json extra = nlohmann::json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const CheckpointMetadata& meta);

// Writes to a temporary sibling and renames it over `path`, so an existing
// checkpoint stays loadable if the process dies mid-write.
void save_checkpoint(const Model& model, const CheckpointMetadata& meta,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model model;
  CheckpointMetadata metadata;
};

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into an already-built model. Every tensor must
// exist in `model` with the same shape; the first mismatch is reported by
// name. Trainability flags are restored as well.
CheckpointMetadata load_weights_into(Model& model, const std::filesystem::path& path);

}  // namespace eyedex
