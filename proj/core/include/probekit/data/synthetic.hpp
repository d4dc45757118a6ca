#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "probekit/data/feature_set.hpp"

namespace probekit::data {

/// Planted-foreground generator: every sample is Gaussian background noise
/// with `fg_tokens_per_sample` tokens replaced by its class mean plus noise.
struct SynthSpec {
  std::uint32_t classes = 8;
  std::uint32_t samples_per_class = 200;
  std::uint32_t tokens = 64;
  std::uint32_t channels = 32;
  std::uint32_t grid_w = 8;
  std::uint32_t grid_h = 8;
  std::uint32_t fg_tokens_per_sample = 4;
  double fg_mean_scale = 3.0;
  double noise_std = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

/// C x D matrix of class means. Rows are orthogonal when C <= D (otherwise
/// independent random directions), each of norm fg_mean_scale.
Eigen::MatrixXd synthetic_class_means(const SynthSpec& spec);

/// Samples are ordered class-major. Foreground positions are recorded as one
/// 1x1 box per foreground token.
FeatureSet generate_synthetic(const SynthSpec& spec);

}  // namespace probekit::data
