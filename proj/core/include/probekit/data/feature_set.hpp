#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace probekit::data {

/// Inclusive rectangle on the patch grid.
struct BBox {
  std::uint32_t xmin = 0;
  std::uint32_t ymin = 0;
  std::uint32_t xmax = 0;
  std::uint32_t ymax = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Frozen patch-token features of S samples, N tokens each, D channels per
/// token, stored row-major as (sample, token, channel) in single precision.
struct FeatureSet {
  std::uint32_t samples = 0;
  std::uint32_t tokens = 0;
  std::uint32_t channels = 0;
  std::uint32_t num_classes = 0;
  std::uint32_t grid_w = 0;  ///< 0 together with grid_h when there is no layout
  std::uint32_t grid_h = 0;

  std::vector<float> features;
  std::vector<std::uint32_t> labels;
  std::optional<std::vector<float>> cls_tokens;                ///< S x D
  std::optional<std::vector<std::vector<BBox>>> bboxes;        ///< per sample

  /// Throws ValidationError when any invariant is broken.
  void validate() const;

  [[nodiscard]] std::span<const float> sample_span(std::size_t s) const;

  /// Features of one sample as a D x N matrix (one column per token).
  [[nodiscard]] Eigen::MatrixXd sample_matrix(std::size_t s) const;

  [[nodiscard]] std::optional<Eigen::VectorXd> cls_vector(std::size_t s) const;

  [[nodiscard]] std::vector<std::size_t> class_counts() const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

/// One sample in the form the pooling code consumes.
struct Sample {
  Eigen::MatrixXd x;                   ///< D x N
  std::optional<Eigen::VectorXd> cls;  ///< D
};

/// Decoded samples of a FeatureSet, converted to double once.
std::vector<Sample> materialize(const FeatureSet& set);

}  // namespace probekit::data
