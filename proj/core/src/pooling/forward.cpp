#include "probekit/pooling/forward.hpp"

#include <string>
#include <vector>

#include "probekit/common/error.hpp"

namespace probekit::pooling {

using autodiff::Tape;
using autodiff::Var;

namespace {

std::size_t slot_of(std::optional<Matrix> PoolParams::*member) {
  for (std::size_t i = 0; i < kPoolSlots.size(); ++i)
    if (kPoolSlots[i].member == member) return i;
  return kPoolSlots.size();
}

class Builder {
 public:
  Builder(Tape& tape, const PoolConfig& config, const ParamVars& params, const ForwardOptions& options)
      : t_(tape), c_(config), p_(params), o_(options) {}

  Var normalized_input(Var raw) {
    switch (c_.input_norm) {
      case InputNorm::none:
        return raw;
      case InputNorm::layernorm:
        return t_.layer_norm_cols(raw, p_[&PoolParams::ln_in_gamma], p_[&PoolParams::ln_in_beta],
                                  kNormEps);
      case InputNorm::batchnorm: {
        Eigen::VectorXd mean;
        Eigen::VectorXd var;
        if (o_.batch_stats != nullptr) {
          mean = o_.batch_stats->mean;
          var = o_.batch_stats->var;
        } else {
          mean = t_.value(p_[&PoolParams::bn_mean]).col(0);
          var = t_.value(p_[&PoolParams::bn_var]).col(0);
        }
        const Eigen::ArrayXd inv_std = (var.array() + kNormEps).rsqrt();
        Matrix xn = t_.value(raw);
        xn.colwise() -= mean;
        xn.array().colwise() *= inv_std;
        return t_.constant(std::move(xn));
      }
    }
    return raw;
  }

  /// Logits plus, for shared key/value weights, the per-token values that
  /// double as keys.
  Var logits(Var raw, Var xn, Var& shared_values) {
    const Eigen::Index m = c_.heads;
    Var keys = xn;
    if (c_.key_transform == Transform::learned) {
      if (c_.share_key_value) {
        shared_values = affine(p_[&PoolParams::w_v], xn, p_[&PoolParams::b_v]);
        keys = shared_values;
      } else {
        keys = affine(p_[&PoolParams::w_k], xn, p_[&PoolParams::b_k]);
      }
    }
    if (c_.key_nonlinearity == KeyNonlinearity::relu) keys = t_.relu(keys);

    Var out;
    if (c_.query_source == QuerySource::learned_queries_u_j) {
      out = t_.matmul(p_[&PoolParams::queries], keys);
    } else {
      Var query;
      switch (c_.query_source) {
        case QuerySource::learned_vector_u:
          query = p_[&PoolParams::u];
          break;
        case QuerySource::learned_query_q:
          query = p_[&PoolParams::q];
          break;
        case QuerySource::data_mean:
          query = t_.mean_cols(raw);
          break;
        case QuerySource::learned_queries_u_j:
          break;
      }
      if (c_.query_norm == QueryNorm::layernorm)
        query = t_.layer_norm_cols(query, p_[&PoolParams::ln_q_gamma], p_[&PoolParams::ln_q_beta],
                                   kNormEps);
      if (c_.has_query_projection())
        query = affine(p_[&PoolParams::w_q], query, p_[&PoolParams::b_q]);
      const Eigen::Index da = c_.attn_dim / m;
      std::vector<Var> rows;
      rows.reserve(static_cast<std::size_t>(m));
      for (Eigen::Index j = 0; j < m; ++j) {
        const Var qj = t_.transpose(t_.rows(query, j * da, da));
        rows.push_back(t_.matmul(qj, t_.rows(keys, j * da, da)));
      }
      out = m == 1 ? rows.front() : t_.concat_rows(rows);
    }
    if (c_.logit_scale != 1.0) out = t_.scale(out, c_.logit_scale);
    if (const Var b = p_[&PoolParams::attn_bias]; b.valid()) out = t_.add_colwise(out, b);
    return out;
  }

  Var normalize(Var logits) {
    return c_.normalizer == Normalizer::softmax ? t_.softmax_rows(logits) : t_.softplus(logits);
  }

  Var force_uniform(Var attention) {
    if (!o_.uniform_row) return attention;
    const Eigen::Index m = t_.value(attention).rows();
    const Eigen::Index n = t_.value(attention).cols();
    const Eigen::Index j = *o_.uniform_row;
    if (j >= m) throw ValidationError("uniform replacement: predictor " + std::to_string(j) +
                                      " out of range for M = " + std::to_string(m));
    std::vector<Var> parts;
    if (j > 0) parts.push_back(t_.rows(attention, 0, j));
    parts.push_back(t_.constant(Matrix::Constant(1, n, 1.0 / static_cast<double>(n))));
    if (j + 1 < m) parts.push_back(t_.rows(attention, j + 1, m - j - 1));
    return t_.concat_rows(parts);
  }

  Var mix(Var attention) {
    if (!c_.mixing) return attention;
    return t_.matmul(t_.softmax_rows(p_[&PoolParams::mix]), attention);
  }

  /// y before the post block; `attention` has one row per pooled map.
  Var pool(Var xn, Var attention, Var shared_values) {
    const Eigen::Index maps = t_.value(attention).rows();
    const Eigen::Index d_o = c_.out_dim / maps;
    const Var w_v = p_[&PoolParams::w_v];
    const Var b_v = p_[&PoolParams::b_v];
    std::vector<Var> blocks;
    blocks.reserve(static_cast<std::size_t>(maps));

    if (c_.values_per_token()) {
      const Var values = shared_values.valid() ? shared_values : affine(w_v, xn, b_v);
      for (Eigen::Index j = 0; j < maps; ++j)
        blocks.push_back(t_.matmul(t_.rows(values, j * d_o, d_o),
                                   t_.transpose(t_.rows(attention, j, 1))));
    } else if (c_.value_transform == Transform::identity) {
      if (maps == 1) return t_.matmul(xn, t_.transpose(attention));
      for (Eigen::Index j = 0; j < maps; ++j)
        blocks.push_back(
            t_.matmul(t_.rows(xn, j * d_o, d_o), t_.transpose(t_.rows(attention, j, 1))));
    } else {
      const Var pooled = t_.matmul(xn, t_.transpose(attention));  // D_i x maps
      for (Eigen::Index j = 0; j < maps; ++j) {
        const Var wj = maps == 1 ? w_v : t_.rows(w_v, j * d_o, d_o);
        Var yj = t_.matmul(wj, maps == 1 ? pooled : t_.cols(pooled, j, 1));
        if (b_v.valid()) yj = t_.add(yj, maps == 1 ? b_v : t_.rows(b_v, j * d_o, d_o));
        blocks.push_back(yj);
      }
    }
    return blocks.size() == 1 ? blocks.front() : t_.concat_rows(blocks);
  }

  /// Uniform-attention pooling of GAP: the token mean, then the optional
  /// value projection.
  Var pool_mean(Var xn) {
    Var y = t_.mean_cols(xn);
    if (c_.value_transform == Transform::learned)
      y = affine(p_[&PoolParams::w_v], y, p_[&PoolParams::b_v]);
    return y;
  }

  Var post(Var y) {
    if (c_.post_block == PostBlock::none) return y;
    y = affine(p_[&PoolParams::w_p], y, p_[&PoolParams::b_p]);
    if (c_.post_block == PostBlock::proj) return y;
    Var h = t_.layer_norm_cols(y, p_[&PoolParams::ln_post_gamma], p_[&PoolParams::ln_post_beta],
                               kNormEps);
    h = t_.gelu(affine(p_[&PoolParams::w_1], h, p_[&PoolParams::b_1]));
    h = affine(p_[&PoolParams::w_2], h, p_[&PoolParams::b_2]);
    return t_.add(y, h);
  }

 private:
  Var affine(Var w, Var x, Var b) {
    const Var out = t_.matmul(w, x);
    return b.valid() ? t_.add_colwise(out, b) : out;
  }

  Tape& t_;
  const PoolConfig& c_;
  const ParamVars& p_;
  const ForwardOptions& o_;
};

void check_input(const PoolConfig& config, const Matrix& x) {
  if (x.rows() != config.in_dim)
    throw ValidationError("input has " + std::to_string(x.rows()) + " channels, config expects D_i = " +
                          std::to_string(config.in_dim));
  if (x.cols() < 1) throw ValidationError("input has no tokens");
}

}  // namespace

Var ParamVars::operator[](std::optional<Matrix> PoolParams::*member) const {
  return slots[slot_of(member)];
}

ParamVars bind_params(Tape& tape, const PoolParams& params, std::size_t slot_offset) {
  ParamVars vars;
  for (std::size_t i = 0; i < kPoolSlots.size(); ++i) {
    const auto& m = params.*(kPoolSlots[i].member);
    if (!m) continue;
    vars.slots[i] = kPoolSlots[i].learnable ? tape.parameter(*m, slot_offset + i) : tape.constant(*m);
  }
  return vars;
}

ForwardGraph build_forward(Tape& tape, const PoolConfig& config, const ParamVars& params,
                           const Matrix& x, const Eigen::VectorXd* cls,
                           const ForwardOptions& options) {
  check_input(config, x);
  Builder b(tape, config, params, options);
  ForwardGraph g;
  const Eigen::Index n = x.cols();

  if (config.method == Method::cls) {
    if (cls == nullptr) throw ValidationError("CLS pooling requested but the features carry no cls tokens");
    if (cls->size() != config.in_dim) throw ValidationError("cls token width does not match D_i");
    g.feature = b.post(tape.constant(*cls));
    return g;
  }

  const Var raw = tape.constant(x);
  const Var xn = b.normalized_input(raw);
  if (config.method == Method::gap) {
    g.logits = tape.constant(Matrix::Zero(1, n));
    g.predictor_attention = tape.constant(Matrix::Constant(1, n, 1.0 / static_cast<double>(n)));
    g.attention = g.predictor_attention;
    g.feature = b.post(b.pool_mean(xn));
    return g;
  }

  Var shared_values;
  g.logits = b.logits(raw, xn, shared_values);
  g.predictor_attention = b.force_uniform(b.normalize(g.logits));
  g.attention = b.mix(g.predictor_attention);
  g.feature = b.post(b.pool(xn, g.attention, shared_values));
  return g;
}

Matrix normalize_input(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                       const ForwardOptions& options) {
  check_input(config, x);
  Tape tape(false);
  const ParamVars vars = bind_params(tape, params);
  Builder b(tape, config, vars, options);
  return tape.value(b.normalized_input(tape.constant(x)));
}

Matrix predict_logits(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                      const ForwardOptions& options) {
  check_input(config, x);
  if (!config.uses_attention()) return Matrix::Zero(1, x.cols());
  Tape tape(false);
  const ParamVars vars = bind_params(tape, params);
  Builder b(tape, config, vars, options);
  const Var raw = tape.constant(x);
  Var shared;
  return tape.value(b.logits(raw, b.normalized_input(raw), shared));
}

AttentionSet normalize(const Matrix& logits, Normalizer mode) {
  AttentionSet out;
  out.logits = logits;
  if (mode == Normalizer::softmax) {
    out.values = autodiff::kernels::softmax_rows(logits);
    out.normalized = true;
  } else {
    out.values = autodiff::kernels::softplus(logits);
    out.normalized = false;
  }
  return out;
}

PooledFeature pool(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                   const AttentionSet& attention, const ForwardOptions& options) {
  check_input(config, x);
  if (attention.values.rows() != config.pooled_maps() || attention.values.cols() != x.cols())
    throw ValidationError("attention has shape " + std::to_string(attention.values.rows()) + "x" +
                          std::to_string(attention.values.cols()) + ", expected " +
                          std::to_string(config.pooled_maps()) + "x" + std::to_string(x.cols()));
  if ((config.value_transform == Transform::learned) != params.w_v.has_value())
    throw ValidationError("W_V must be present exactly when the value transform is learned");
  Tape tape(false);
  const ParamVars vars = bind_params(tape, params);
  Builder b(tape, config, vars, options);
  const Var xn = b.normalized_input(tape.constant(x));
  Var shared;
  if (config.share_key_value) shared = tape.matmul(vars[&PoolParams::w_v], xn);
  if (shared.valid() && vars[&PoolParams::b_v].valid())
    shared = tape.add_colwise(shared, vars[&PoolParams::b_v]);
  return {tape.value(b.pool(xn, tape.constant(attention.values), shared)).col(0)};
}

ForwardResult forward(const PoolConfig& config, const PoolParams& params, const Matrix& x,
                      const Eigen::VectorXd* cls, const ForwardOptions& options) {
  Tape tape(false);
  const ParamVars vars = bind_params(tape, params);
  const ForwardGraph g = build_forward(tape, config, vars, x, cls, options);
  ForwardResult r;
  r.feature.y = tape.value(g.feature).col(0);
  if (g.attention.valid()) {
    r.attention.values = tape.value(g.attention);
    r.attention.logits = tape.value(g.logits);
    r.attention.normalized = config.normalizer == Normalizer::softmax || !config.uses_attention();
    r.predictor_attention = tape.value(g.predictor_attention);
  }
  return r;
}

Matrix mix_attention(const Matrix& attention, const Matrix& mix_logits) {
  if (mix_logits.rows() < 1) throw ValidationError("mixing needs at least one output map");
  if (mix_logits.cols() != attention.rows())
    throw ValidationError("mixing matrix has " + std::to_string(mix_logits.cols()) +
                          " columns for " + std::to_string(attention.rows()) + " input maps");
  return autodiff::kernels::softmax_rows(mix_logits) * attention;
}

NormStats batch_norm_stats(std::span<const Matrix* const> samples) {
  if (samples.empty()) throw ValidationError("batch statistics need at least one sample");
  const Eigen::Index d = samples.front()->rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  double count = 0.0;
  for (const Matrix* s : samples) {
    sum += s->rowwise().sum();
    count += static_cast<double>(s->cols());
  }
  NormStats stats;
  stats.mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  for (const Matrix* s : samples) sq += (s->colwise() - stats.mean).rowwise().squaredNorm();
  stats.var = sq / count;
  return stats;
}

ConvertedProbe mhca_to_mqca(const PoolConfig& config, const PoolParams& params) {
  const bool fixed_query = config.query_source == QuerySource::learned_query_q ||
                           config.query_source == QuerySource::learned_vector_u;
  if (!fixed_query || config.key_transform != Transform::learned || config.share_key_value ||
      config.key_nonlinearity != KeyNonlinearity::none)
    throw ValidationError("mhca_to_mqca: source must use a learned query against a linear key projection");
  if (!params.w_k) throw ValidationError("mhca_to_mqca: source params lack W_K");
  if (config.normalizer != Normalizer::softmax && params.b_v)
    throw ValidationError("mhca_to_mqca: a value bias only commutes with normalized attention");

  // Effective per-head query before the key projection.
  Tape tape(false);
  const ParamVars vars = bind_params(tape, params);
  Var query;
  if (config.query_source == QuerySource::learned_query_q) {
    if (!params.q) throw ValidationError("mhca_to_mqca: source params lack q");
    query = vars[&PoolParams::q];
  } else {
    if (!params.u) throw ValidationError("mhca_to_mqca: source params lack u");
    query = vars[&PoolParams::u];
  }
  if (config.query_norm == QueryNorm::layernorm)
    query = tape.layer_norm_cols(query, vars[&PoolParams::ln_q_gamma], vars[&PoolParams::ln_q_beta],
                                 kNormEps);
  if (config.has_query_projection()) {
    query = tape.matmul(vars[&PoolParams::w_q], query);
    if (vars[&PoolParams::b_q].valid()) query = tape.add(query, vars[&PoolParams::b_q]);
  }
  const Eigen::VectorXd q = tape.value(query).col(0);

  const Eigen::Index m = config.heads;
  const Eigen::Index da = config.attn_dim / m;
  Matrix queries(m, config.in_dim);
  Matrix attn_bias = params.attn_bias.value_or(Matrix::Zero(m, 1));
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto qj = q.segment(j * da, da);
    queries.row(j) = (params.w_k->middleRows(j * da, da).transpose() * qj).transpose();
    if (params.b_k) attn_bias(j, 0) += params.b_k->col(0).segment(j * da, da).dot(qj);
  }

  ConvertedProbe out;
  out.config = config;
  out.config.method = Method::ep;
  out.config.query_source = QuerySource::learned_queries_u_j;
  out.config.key_transform = Transform::identity;
  out.config.query_norm = QueryNorm::none;
  out.config.attn_dim = config.in_dim;
  out.config.bias.query = false;
  out.config.bias.key = false;
  out.config.bias.attn = config.bias.attn || params.b_k.has_value();
  out.config.validate();

  out.params = params;
  out.params.u.reset();
  out.params.q.reset();
  out.params.w_q.reset();
  out.params.b_q.reset();
  out.params.w_k.reset();
  out.params.b_k.reset();
  out.params.ln_q_gamma.reset();
  out.params.ln_q_beta.reset();
  out.params.queries = std::move(queries);
  out.params.attn_bias.reset();
  if (out.config.bias.attn) out.params.attn_bias = std::move(attn_bias);
  return out;
}

}  // namespace probekit::pooling
