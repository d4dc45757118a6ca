#include "probekit/pooling/params.hpp"

#include <cmath>
#include <string>

#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"

namespace probekit::pooling {

namespace {

std::size_t slot_index(std::optional<Matrix> PoolParams::*member) {
  for (std::size_t i = 0; i < kPoolSlots.size(); ++i)
    if (kPoolSlots[i].member == member) return i;
  return kPoolSlots.size();
}

Eigen::Index query_dim(const PoolConfig& c) {
  return c.query_source == QuerySource::learned_query_q ? c.attn_dim : c.in_dim;
}

}  // namespace

std::vector<TensorSpec> required_tensors(const PoolConfig& c) {
  c.validate();
  std::vector<TensorSpec> out;
  auto add = [&](std::optional<Matrix> PoolParams::*member, Eigen::Index rows, Eigen::Index cols,
                 InitKind init) { out.push_back({slot_index(member), rows, cols, init}); };
  const Eigen::Index di = c.in_dim;
  const Eigen::Index da = c.attn_dim;
  const Eigen::Index dout = c.out_dim;

  if (c.uses_attention()) {
    switch (c.query_source) {
      case QuerySource::learned_vector_u:
        add(&PoolParams::u, di, 1, InitKind::trunc_normal);
        break;
      case QuerySource::learned_query_q:
        add(&PoolParams::q, da, 1, InitKind::trunc_normal);
        break;
      case QuerySource::learned_queries_u_j:
        add(&PoolParams::queries, c.heads, di, InitKind::trunc_normal);
        break;
      case QuerySource::data_mean:
        break;
    }
    if (c.has_query_projection()) {
      add(&PoolParams::w_q, da, di, InitKind::xavier_uniform);
      if (c.bias.query) add(&PoolParams::b_q, da, 1, InitKind::zeros);
    }
    if (c.key_transform == Transform::learned && !c.share_key_value) {
      add(&PoolParams::w_k, da, di, InitKind::xavier_uniform);
      if (c.bias.key) add(&PoolParams::b_k, da, 1, InitKind::zeros);
    }
  }
  if (c.value_transform == Transform::learned) {
    add(&PoolParams::w_v, dout, di, InitKind::xavier_uniform);
    if (c.bias.value) add(&PoolParams::b_v, dout, 1, InitKind::zeros);
  }
  if (c.uses_attention() && c.bias.attn) add(&PoolParams::attn_bias, c.heads, 1, InitKind::zeros);
  if (c.input_norm == InputNorm::layernorm) {
    add(&PoolParams::ln_in_gamma, di, 1, InitKind::ones);
    add(&PoolParams::ln_in_beta, di, 1, InitKind::zeros);
  }
  if (c.uses_attention() && c.query_norm == QueryNorm::layernorm) {
    add(&PoolParams::ln_q_gamma, query_dim(c), 1, InitKind::ones);
    add(&PoolParams::ln_q_beta, query_dim(c), 1, InitKind::zeros);
  }
  if (c.input_norm == InputNorm::batchnorm) {
    add(&PoolParams::bn_mean, di, 1, InitKind::zeros);
    add(&PoolParams::bn_var, di, 1, InitKind::ones);
  }
  if (c.post_block != PostBlock::none) {
    const Eigen::Index f = c.feature_dim();
    add(&PoolParams::w_p, f, dout, InitKind::xavier_uniform);
    if (c.bias.proj) add(&PoolParams::b_p, f, 1, InitKind::zeros);
    if (c.post_block == PostBlock::proj_mlp_residual) {
      const Eigen::Index hidden = f * c.mlp_ratio;
      add(&PoolParams::ln_post_gamma, f, 1, InitKind::ones);
      add(&PoolParams::ln_post_beta, f, 1, InitKind::zeros);
      add(&PoolParams::w_1, hidden, f, InitKind::xavier_uniform);
      if (c.bias.mlp) add(&PoolParams::b_1, hidden, 1, InitKind::zeros);
      add(&PoolParams::w_2, f, hidden, InitKind::xavier_uniform);
      if (c.bias.mlp) add(&PoolParams::b_2, f, 1, InitKind::zeros);
    }
  }
  if (c.mixing) add(&PoolParams::mix, *c.mixing, c.heads, InitKind::trunc_normal);
  return out;
}

PoolParams init_params(const PoolConfig& config, std::uint64_t seed) {
  PoolParams p;
  for (const auto& t : required_tensors(config)) {
    const auto& slot = kPoolSlots[t.slot];
    Rng rng(derive_seed(seed, "init/" + std::string(slot.name)));
    Matrix m(t.rows, t.cols);
    switch (t.init) {
      case InitKind::zeros:
        m.setZero();
        break;
      case InitKind::ones:
        m.setOnes();
        break;
      case InitKind::trunc_normal:
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = truncated_normal(rng, 0.02);
        break;
      case InitKind::xavier_uniform: {
        const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
        break;
      }
    }
    p.*(slot.member) = std::move(m);
  }
  return p;
}

void validate_params(const PoolConfig& config, const PoolParams& params) {
  const auto specs = required_tensors(config);
  std::vector<bool> wanted(kPoolSlots.size(), false);
  for (const auto& t : specs) {
    wanted[t.slot] = true;
    const auto& slot = kPoolSlots[t.slot];
    const auto& m = params.*(slot.member);
    if (!m)
      throw ValidationError("pool params: missing tensor " + std::string(slot.name));
    if (m->rows() != t.rows || m->cols() != t.cols)
      throw ValidationError("pool params: tensor " + std::string(slot.name) + " has shape " +
                            std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                            ", expected " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    if (!m->allFinite())
      throw ValidationError("pool params: tensor " + std::string(slot.name) + " is not finite");
  }
  for (std::size_t i = 0; i < kPoolSlots.size(); ++i)
    if (!wanted[i] && (params.*(kPoolSlots[i].member)).has_value())
      throw ValidationError("pool params: unexpected tensor " + std::string(kPoolSlots[i].name));
}

std::uint64_t learnable_count(const PoolParams& params) {
  std::uint64_t total = 0;
  for (const auto& slot : kPoolSlots) {
    const auto& m = params.*(slot.member);
    if (slot.learnable && m) total += static_cast<std::uint64_t>(m->size());
  }
  return total;
}

}  // namespace probekit::pooling
