#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "probekit/pooling/config.hpp"

namespace probekit::pooling {

using Matrix = Eigen::MatrixXd;

/// Learnable tensors (and BN running statistics) of one pooling variant.
/// Vectors are stored as n x 1 matrices. Absent tensors are nullopt.
struct PoolParams {
  std::optional<Matrix> u;          ///< learned input vector, in_dim
  std::optional<Matrix> q;          ///< learned query, attn_dim
  std::optional<Matrix> queries;    ///< EP queries u_j, heads x in_dim
  std::optional<Matrix> w_q, b_q;   ///< attn_dim x in_dim
  std::optional<Matrix> w_k, b_k;   ///< attn_dim x in_dim
  std::optional<Matrix> w_v, b_v;   ///< out_dim x in_dim
  std::optional<Matrix> attn_bias;  ///< heads x 1
  std::optional<Matrix> ln_in_gamma, ln_in_beta;
  std::optional<Matrix> ln_q_gamma, ln_q_beta;
  std::optional<Matrix> bn_mean, bn_var;  ///< running statistics, not learned
  std::optional<Matrix> w_p, b_p;
  std::optional<Matrix> ln_post_gamma, ln_post_beta;
  std::optional<Matrix> w_1, b_1, w_2, b_2;
  std::optional<Matrix> mix;  ///< mixed maps x heads, logits of the mixing softmax

  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

struct TensorSlot {
  std::string_view name;
  std::optional<Matrix> PoolParams::*member;
  bool learnable;
};

inline constexpr std::array<TensorSlot, 25> kPoolSlots{{
    {"u", &PoolParams::u, true},
    {"q", &PoolParams::q, true},
    {"U", &PoolParams::queries, true},
    {"W_Q", &PoolParams::w_q, true},
    {"b_Q", &PoolParams::b_q, true},
    {"W_K", &PoolParams::w_k, true},
    {"b_K", &PoolParams::b_k, true},
    {"W_V", &PoolParams::w_v, true},
    {"b_V", &PoolParams::b_v, true},
    {"attn_bias", &PoolParams::attn_bias, true},
    {"ln_in.gamma", &PoolParams::ln_in_gamma, true},
    {"ln_in.beta", &PoolParams::ln_in_beta, true},
    {"ln_q.gamma", &PoolParams::ln_q_gamma, true},
    {"ln_q.beta", &PoolParams::ln_q_beta, true},
    {"bn.running_mean", &PoolParams::bn_mean, false},
    {"bn.running_var", &PoolParams::bn_var, false},
    {"W_P", &PoolParams::w_p, true},
    {"b_P", &PoolParams::b_p, true},
    {"ln_post.gamma", &PoolParams::ln_post_gamma, true},
    {"ln_post.beta", &PoolParams::ln_post_beta, true},
    {"W_1", &PoolParams::w_1, true},
    {"b_1", &PoolParams::b_1, true},
    {"W_2", &PoolParams::w_2, true},
    {"b_2", &PoolParams::b_2, true},
    {"mix", &PoolParams::mix, true},
}};

enum class InitKind { trunc_normal, xavier_uniform, zeros, ones };

struct TensorSpec {
  std::size_t slot;  ///< index into kPoolSlots
  Eigen::Index rows;
  Eigen::Index cols;
  InitKind init;
};

/// Exactly the tensors a config allocates, in slot order.
std::vector<TensorSpec> required_tensors(const PoolConfig& config);

/// Deterministic in `seed`: queries from a truncated normal (std 0.02),
/// projections Xavier-uniform, biases zero, norms at identity, BN running
/// statistics (0, 1).
PoolParams init_params(const PoolConfig& config, std::uint64_t seed);

/// Throws ValidationError unless `params` holds exactly the tensors of
/// `config` with matching shapes and finite values.
void validate_params(const PoolConfig& config, const PoolParams& params);

/// Scalars in learnable tensors.
std::uint64_t learnable_count(const PoolParams& params);

}  // namespace probekit::pooling
