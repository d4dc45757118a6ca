#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/data/feature_set.hpp"
#include "probekit/pooling/forward.hpp"
#include "probekit/training/loss.hpp"
#include "probekit/training/probe.hpp"

namespace probekit::training {

enum class Optimizer { sgd_momentum, lars };

struct HyperParams {
  std::uint32_t epochs = 90;
  std::uint32_t warmup_epochs = 10;
  double lr = 0.1;
  std::uint32_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.0;
  Optimizer optimizer = Optimizer::sgd_momentum;
  double trust_coeff = 0.001;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

nlohmann::ordered_json to_json(const HyperParams& h);
HyperParams hyper_from_json(const nlohmann::json& j);

/// Linear warmup to `lr` over warmup_epochs, then cosine decay towards 0.
double scheduled_lr(const HyperParams& hyper, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_classification = 0.0;
  double train_similarity = 0.0;
  double train_top1 = 0.0;  ///< running accuracy over the epoch's batches
  double val_top1 = 0.0;
  std::vector<std::pair<std::uint32_t, double>> val_top1_at_dim;  ///< per Matryoshka dim
};

nlohmann::ordered_json to_json(const EpochRecord& r);

struct TrainMetadata {
  std::uint32_t epochs_run = 0;
  double final_train_loss = 0.0;
  double final_val_top1 = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainMetadata&, const TrainMetadata&) = default;
};

struct ProbeCheckpoint {
  Probe probe;
  LossConfig loss;
  HyperParams hyper;
  TrainMetadata metadata;
  std::uint32_t num_classes = 0;
  nlohmann::ordered_json run;  ///< resolved invocation, stored verbatim when not null

  friend bool operator==(const ProbeCheckpoint&, const ProbeCheckpoint&) = default;
};

/// Fresh probe: pooling tensors from init_params and one classifier (or one
/// per Matryoshka dim in vanilla mode), all seeded from `seed`.
Probe init_probe(const pooling::PoolConfig& config, const LossConfig& loss, std::uint32_t num_classes,
                 std::uint64_t seed);

struct TrainResult {
  ProbeCheckpoint checkpoint;
  std::vector<EpochRecord> report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on `train_indices` of `train_set` (all samples when empty) and
/// reports validation top-1 on `val_indices` of `val_set` after every epoch.
/// A non-finite loss aborts with NumericError naming epoch and batch.
TrainResult train(const pooling::PoolConfig& config, const LossConfig& loss, const HyperParams& hyper,
                  const data::FeatureSet& train_set, const data::FeatureSet& val_set,
                  std::span<const std::size_t> train_indices = {},
                  std::span<const std::size_t> val_indices = {}, const EpochCallback& on_epoch = {});

/// Forward pass of every selected sample (all when `indices` is empty).
std::vector<pooling::ForwardResult> forward_all(const Probe& probe, std::span<const data::Sample> samples,
                                                std::span<const std::size_t> indices = {},
                                                const pooling::ForwardOptions& options = {});

/// Top-1 accuracy of precomputed features.
double top1(const Probe& probe, std::span<const pooling::ForwardResult> outputs,
            std::span<const std::uint32_t> labels, std::optional<std::size_t> prefix_dim = std::nullopt);

double evaluate(const Probe& probe, std::span<const data::Sample> samples,
                std::span<const std::uint32_t> labels, std::span<const std::size_t> indices = {},
                std::optional<std::size_t> prefix_dim = std::nullopt,
                const pooling::ForwardOptions& options = {});

/// Checks that `set` has the checkpoint's channel and class counts, then
/// evaluates every sample (or `indices`).
double evaluate(const ProbeCheckpoint& checkpoint, const data::FeatureSet& set,
                std::optional<std::size_t> prefix_dim = std::nullopt,
                std::span<const std::size_t> indices = {});

void check_compatible(const ProbeCheckpoint& checkpoint, const data::FeatureSet& set);

}  // namespace probekit::training
