#pragma once

#include <filesystem>
#include <string>

#include "popusense/train.hpp"

namespace popusense::train {

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint layout:
///
///   POPUSENSE-CHECKPOINT
///   version 1
///   <key> <value>            one line per metadata field
///   block <name> <dims...>   one line per parameter block, in storage order
///   end
///   <raw little-endian float32 data of every block, concatenated>
///
/// Block order: model parameters (encoder.0..2 and decoder.0..2, each
/// conv_a/conv_b/skip, then head; weight before bias, weights laid out [out][ky][kx][in]), then
/// refiner.<l>.theta / refiner.<l>.bias, then bank.entries (oldest row first).
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle);

/// Throws Error(IoError) when the file cannot be opened,
/// Error(VersionMismatch) for another schema version, and
/// Error(CorruptCheckpoint) for malformed or truncated content.
ModelBundle load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const ModelBundle& bundle);
ModelBundle deserialize_checkpoint(const std::string& bytes);

}  // namespace popusense::train
