#pragma once

#include <filesystem>
#include <string>

#include "probekit/training/train.hpp"

namespace probekit::training {

inline constexpr int kCheckpointVersion = 1;

/// One line of JSON (configs, metadata, tensor manifest with byte offsets
/// into the payload), a newline, then every tensor as little-endian f64 in
/// column-major order.
std::string encode_checkpoint(const ProbeCheckpoint& checkpoint);
ProbeCheckpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ProbeCheckpoint& checkpoint, const std::filesystem::path& path);
ProbeCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace probekit::training
