#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

#include <Eigen/Dense>

#include "probekit/autodiff/tape.hpp"
#include "probekit/pooling/config.hpp"
#include "probekit/pooling/params.hpp"

namespace probekit::pooling {

inline constexpr double kNormEps = 1e-5;

/// Attention over the N tokens, one row per predictor, plus the logits it
/// came from. Softplus rows are left unnormalized.
struct AttentionSet {
  Matrix values;
  Matrix logits;
  bool normalized = true;
};

struct PooledFeature {
  Eigen::VectorXd y;
};

/// Per-channel BatchNorm statistics (biased variance).
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

struct ForwardOptions {
  /// BatchNorm uses these instead of the running statistics when set.
  const NormStats* batch_stats = nullptr;
  /// Forces predictor j's (pre-mixing) attention to 1/N.
  std::optional<std::uint32_t> uniform_row;
};

/// Pooling tensors registered on a tape, indexed like kPoolSlots.
struct ParamVars {
  std::array<autodiff::Var, kPoolSlots.size()> slots{};

  [[nodiscard]] autodiff::Var operator[](std::optional<Matrix> PoolParams::*member) const;
};

/// Learnable tensors become parameters under slot `slot_offset + i`; BN
/// running statistics become constants.
ParamVars bind_params(autodiff::Tape& tape, const PoolParams& params, std::size_t slot_offset = 0);

struct ForwardGraph {
  autodiff::Var feature;              ///< feature_dim x 1
  autodiff::Var attention;            ///< maps used for pooling (after mixing)
  autodiff::Var predictor_attention;  ///< M x N, before mixing
  autodiff::Var logits;               ///< M x N
};

/// Records the whole forward pass of one sample (x is D_i x N). `cls` is
/// required for the CLS method only.
ForwardGraph build_forward(autodiff::Tape& tape, const PoolConfig& config, const ParamVars& params,
                           const Matrix& x, const Eigen::VectorXd* cls,
                           const ForwardOptions& options = {});

/// Input after the configured normalization.
Matrix normalize_input(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                       const ForwardOptions& options = {});

/// M x N attention logits, including variant preprocessing, logit_scale and
/// attention bias.
Matrix predict_logits(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                      const ForwardOptions& options = {});

AttentionSet normalize(const Matrix& logits, Normalizer mode);

/// Value aggregation with given attention (one row per pooled map), before
/// the post block.
PooledFeature pool(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                   const AttentionSet& attention, const ForwardOptions& options = {});

struct ForwardResult {
  PooledFeature feature;             ///< after the post block
  AttentionSet attention;            ///< pooled maps; logits are pre-mixing
  Matrix predictor_attention;        ///< M x N, before mixing
};

ForwardResult forward(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                      const Eigen::VectorXd* cls = nullptr, const ForwardOptions& options = {});

/// Convex recombination of normalized maps: softmax(mix_logits) * attention.
Matrix mix_attention(const Matrix& attention, const Matrix& mix_logits);

/// Per-channel mean and biased variance over every token of every sample.
NormStats batch_norm_stats(std::span<const Matrix* const> samples);

struct ConvertedProbe {
  PoolConfig config;
  PoolParams params;
};

/// Folds each head's key projection into a full-width query,
/// u_j = W_{K_j}^T q_j, giving an EP probe with the same outputs. A key bias
/// becomes the attention bias b_{K_j} . q_j.
ConvertedProbe mhca_to_mqca(const PoolConfig& config, const PoolParams& params);

}  // namespace probekit::pooling
