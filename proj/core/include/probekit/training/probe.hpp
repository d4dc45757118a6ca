#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "probekit/pooling/config.hpp"
#include "probekit/pooling/params.hpp"

namespace probekit::training {

using Matrix = Eigen::MatrixXd;

/// C-way linear classifier over a (prefix of the) pooled feature.
struct Classifier {
  Matrix weight;  ///< C x D
  Matrix bias;    ///< C x 1

  [[nodiscard]] Eigen::Index classes() const { return weight.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return weight.cols(); }
  friend bool operator==(const Classifier&, const Classifier&) = default;
};

/// Weights from a truncated normal (std 0.01), zero bias.
Classifier init_classifier(std::uint32_t classes, std::uint32_t dim, std::uint64_t seed);

/// W[:, :prefix] y[:prefix] + b; the full width when no prefix is given.
Eigen::VectorXd classify(const Classifier& clf, const Eigen::VectorXd& y,
                         std::optional<std::size_t> prefix_dim = std::nullopt);

/// Index of the largest logit, lowest index on ties.
std::size_t argmax(const Eigen::VectorXd& logits);

/// Pooling head plus classifier(s). classifiers[0] reads the full feature;
/// vanilla Matryoshka training adds one classifier per extra prefix width.
struct Probe {
  pooling::PoolConfig config;
  pooling::PoolParams pool;
  std::vector<Classifier> classifiers;

  /// Trainable tensors are addressed by slot: the pooling slots first, then
  /// weight and bias of every classifier.
  [[nodiscard]] std::size_t slot_count() const;
  /// nullptr for absent tensors and non-learnable buffers.
  [[nodiscard]] Matrix* tensor(std::size_t slot);
  [[nodiscard]] const Matrix* tensor(std::size_t slot) const;
  [[nodiscard]] std::string slot_name(std::size_t slot) const;

  /// Classifier that evaluates a prefix of width `dim`: a dedicated one when
  /// it exists, otherwise the full classifier.
  [[nodiscard]] const Classifier& classifier_for(std::size_t dim) const;

  void validate(std::uint32_t num_classes) const;

  friend bool operator==(const Probe&, const Probe&) = default;
};

inline constexpr std::size_t classifier_weight_slot(std::size_t k) {
  return pooling::kPoolSlots.size() + 2 * k;
}
inline constexpr std::size_t classifier_bias_slot(std::size_t k) {
  return pooling::kPoolSlots.size() + 2 * k + 1;
}

/// One matrix per slot; empty where the probe has no trainable tensor.
struct Gradients {
  std::vector<Matrix> slots;
};

}  // namespace probekit::training
