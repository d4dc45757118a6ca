#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probekit/data/feature_set.hpp"

namespace probekit::data {

/// Per class, ceil(fraction * n_c) indices drawn without replacement.
/// Result is sorted ascending.
std::vector<std::size_t> stratified_subset(const FeatureSet& set, double fraction,
                                           std::uint64_t seed);

/// Index batches for one epoch. Every index appears exactly once; without a
/// shuffle seed the input order is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> indices,
                                                    std::size_t batch_size,
                                                    std::optional<std::uint64_t> shuffle_seed,
                                                    std::size_t epoch);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<const Sample*> samples;
  std::vector<std::uint32_t> labels;
};

/// Walks the batches of one epoch over pre-materialized samples.
class BatchIterator {
 public:
  BatchIterator(const FeatureSet& set, std::span<const Sample> samples,
                std::span<const std::size_t> indices, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed, std::size_t epoch);

  [[nodiscard]] bool done() const { return next_ >= batches_.size(); }
  [[nodiscard]] std::size_t size() const { return batches_.size(); }
  Batch next();

 private:
  const FeatureSet* set_;
  std::span<const Sample> samples_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t next_ = 0;
};

struct SplitManifest {
  std::string train_file;
  std::string val_file;
  std::optional<std::vector<std::size_t>> train_indices;
  std::optional<std::vector<std::size_t>> val_indices;
  std::optional<double> fraction;
  std::optional<std::uint64_t> seed;

  /// Index lists must be in range and duplicate-free.
  void validate(std::size_t train_size, std::size_t val_size) const;
};

SplitManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
std::string manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(std::string_view text);

}  // namespace probekit::data
