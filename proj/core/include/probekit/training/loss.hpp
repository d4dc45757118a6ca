#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "probekit/data/feature_set.hpp"
#include "probekit/pooling/forward.hpp"
#include "probekit/training/probe.hpp"

#include <nlohmann/json.hpp>

namespace probekit::training {

enum class MatryoshkaMode { efficient, vanilla };

struct MatryoshkaTerm {
  std::uint32_t dim = 0;  ///< prefix length of the pooled feature
  double weight = 1.0;

  friend bool operator==(const MatryoshkaTerm&, const MatryoshkaTerm&) = default;
};

struct LossConfig {
  std::vector<MatryoshkaTerm> matryoshka;  ///< empty: plain cross-entropy
  MatryoshkaMode mode = MatryoshkaMode::efficient;
  double attn_sim_weight = 0.0;

  /// Dims strictly decreasing divisors of `feature_dim`, weights >= 0;
  /// vanilla mode starts at the full width.
  void validate(std::uint32_t feature_dim) const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

nlohmann::ordered_json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// -log softmax(logits)[label], max-shifted.
double cross_entropy(const Eigen::VectorXd& logits, std::size_t label);

/// Sum of weight_k * CE at every configured prefix. `classifiers` is one
/// classifier (efficient) or one per term (vanilla).
double matryoshka_loss(std::span<const Classifier> classifiers, const Eigen::VectorXd& y,
                       std::size_t label, const LossConfig& cfg);

/// Mean cosine similarity over pairs of distinct rows; 0 for one row.
double attention_similarity_loss(const Matrix& attention);

struct LossValue {
  double total = 0.0;
  double classification = 0.0;
  double similarity = 0.0;
  std::size_t correct = 0;  ///< samples whose full-width argmax equals the label
};

struct BatchView {
  std::span<const data::Sample* const> samples;
  std::span<const std::uint32_t> labels;
};

struct GradientResult {
  LossValue loss;  ///< batch means (correct is a count)
  Gradients grads;
};

/// Batch-mean loss without recording gradients.
LossValue batch_loss(const Probe& probe, const BatchView& batch, const LossConfig& cfg,
                     const pooling::ForwardOptions& options = {});

/// Exact gradient of the batch-mean loss for every trainable tensor. Sample
/// gradients are summed in index order, so results do not depend on the
/// thread count. Throws NumericError naming the sample on a non-finite loss.
GradientResult backward(const Probe& probe, const BatchView& batch, const LossConfig& cfg,
                        const pooling::ForwardOptions& options = {});

/// Central differences (L(θ+h) - L(θ-h)) / 2h for every trainable scalar.
Gradients finite_diff_grad(const Probe& probe, const BatchView& batch, const LossConfig& cfg,
                           double h, const pooling::ForwardOptions& options = {});

}  // namespace probekit::training
