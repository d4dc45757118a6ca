#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "probekit/data/feature_set.hpp"

namespace probekit::data {

inline constexpr std::uint32_t kFprobeVersion = 1;
/// magic + 7 u32 fields + 2 flag bytes + 2 pad bytes
inline constexpr std::size_t kFprobeHeaderBytes = 4 + 7 * 4 + 4;

/// Serializes to the FPROBE v1 layout (little-endian). Validates first.
std::vector<std::byte> encode_fprobe(const FeatureSet& set);

/// Inverse of encode_fprobe. FormatError on bad magic/version,
/// CorruptionError on truncated payloads, ValidationError on broken
/// invariants.
FeatureSet decode_fprobe(std::span<const std::byte> bytes);

void write_fprobe(const FeatureSet& set, const std::filesystem::path& path);
FeatureSet read_fprobe(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::byte> read_file(const std::filesystem::path& path);

}  // namespace probekit::data
