#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/pooling/config.hpp"

namespace probekit::cost {

/// FLOP convention: a multiply-accumulate is 2 FLOPs; bias adds, ReLU,
/// scaling and residual adds cost 1 per element; softmax, softplus, GELU,
/// LayerNorm and BatchNorm cost 5 per element. Stages follow the order the
/// forward pass evaluates: with a learned key and value the value projection
/// runs on every token, otherwise tokens are pooled first and projected once
/// per map. Backbone FLOPs are not included.
inline constexpr std::uint64_t kFlopsPerMac = 2;
inline constexpr std::uint64_t kFlopsPerElementwise = 1;
inline constexpr std::uint64_t kFlopsPerNormalization = 5;

struct CostBreakdown {
  std::vector<std::pair<std::string, std::uint64_t>> params;  ///< tensor -> scalars, slot order
  std::uint64_t total_params = 0;
  std::vector<std::pair<std::string, std::uint64_t>> flops;  ///< stage -> FLOPs for one image
  std::uint64_t total_flops = 0;
};

/// Learnable scalars of every tensor init_params allocates plus a C-way
/// classifier (C * feature_dim + C), and one more classifier per entry of
/// `extra_classifier_dims`. BatchNorm running statistics are buffers and are
/// not counted.
CostBreakdown param_count(const pooling::PoolConfig& config, std::uint32_t classes,
                          std::span<const std::uint32_t> extra_classifier_dims = {});

/// Learnable scalars that shape the attention maps: queries, query/key
/// projections and their biases, attention bias.
std::uint64_t attention_params(const pooling::PoolConfig& config);

/// Per-stage FLOPs for one image of `tokens` tokens: input_norm, attention
/// (query formation, key projection, logits), normalize (incl. mixing),
/// value, post_block.
CostBreakdown flop_count(const pooling::PoolConfig& config, std::uint32_t tokens);

/// Both halves filled in.
CostBreakdown full_cost(const pooling::PoolConfig& config, std::uint32_t classes, std::uint32_t tokens);

nlohmann::ordered_json to_json(const CostBreakdown& cost);

struct ParetoPoint {
  std::string label;
  double accuracy = 0.0;
  double cost = 0.0;

  friend bool operator==(const ParetoPoint&, const ParetoPoint&) = default;
};

/// Points no other point dominates (cost <= and accuracy >=, one strict),
/// ordered by increasing cost; duplicates are kept.
std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points);

}  // namespace probekit::cost
