#include "probekit/cost/cost_model.hpp"

#include <algorithm>
#include <cmath>

#include "probekit/common/error.hpp"
#include "probekit/pooling/params.hpp"

namespace probekit::cost {

using pooling::PoolConfig;

namespace {

bool is_attention_slot(std::string_view name) {
  return name == "u" || name == "q" || name == "U" || name == "W_Q" || name == "b_Q" || name == "W_K" ||
         name == "b_K" || name == "attn_bias" || name == "ln_q.gamma" || name == "ln_q.beta";
}

std::uint64_t mac(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return kFlopsPerMac * a * b * c; }

}  // namespace

CostBreakdown param_count(const PoolConfig& config, std::uint32_t classes,
                          std::span<const std::uint32_t> extra_classifier_dims) {
  if (classes < 1) throw ValidationError("need at least one class");
  CostBreakdown out;
  for (const auto& t : pooling::required_tensors(config)) {
    const auto& slot = pooling::kPoolSlots[t.slot];
    if (!slot.learnable) continue;
    out.params.emplace_back(std::string(slot.name), static_cast<std::uint64_t>(t.rows * t.cols));
  }
  const std::uint64_t c = classes;
  out.params.emplace_back("classifier.weight", c * config.feature_dim());
  out.params.emplace_back("classifier.bias", c);
  for (std::size_t k = 0; k < extra_classifier_dims.size(); ++k) {
    const std::string base = "classifier." + std::to_string(k + 1);
    out.params.emplace_back(base + ".weight", c * extra_classifier_dims[k]);
    out.params.emplace_back(base + ".bias", c);
  }
  for (const auto& [name, n] : out.params) out.total_params += n;
  return out;
}

std::uint64_t attention_params(const PoolConfig& config) {
  std::uint64_t total = 0;
  for (const auto& t : pooling::required_tensors(config)) {
    const auto& slot = pooling::kPoolSlots[t.slot];
    if (slot.learnable && is_attention_slot(slot.name)) total += static_cast<std::uint64_t>(t.rows * t.cols);
  }
  return total;
}

CostBreakdown flop_count(const PoolConfig& c, std::uint32_t tokens) {
  c.validate();
  if (tokens < 1) throw ValidationError("flop count needs N >= 1");
  const std::uint64_t n = tokens;
  const std::uint64_t di = c.in_dim;
  const std::uint64_t da = c.attn_dim;
  const std::uint64_t dout = c.out_dim;
  const std::uint64_t m = c.heads;
  const std::uint64_t maps = c.pooled_maps();
  const std::uint64_t ew = kFlopsPerElementwise;
  const std::uint64_t nf = kFlopsPerNormalization;

  std::uint64_t input_norm = 0;
  std::uint64_t attention = 0;
  std::uint64_t normalize = 0;
  std::uint64_t value = 0;
  std::uint64_t post = 0;

  if (c.input_norm != pooling::InputNorm::none && c.method != pooling::Method::cls) input_norm = nf * di * n;

  if (c.method == pooling::Method::gap) {
    value = ew * di * n;  // token mean
    if (c.value_transform == pooling::Transform::learned) {
      value += mac(dout, di, 1);
      if (c.bias.value) value += ew * dout;
    }
  } else if (c.uses_attention()) {
    // query formation
    if (c.query_source == pooling::QuerySource::data_mean) attention += ew * di * n;
    const std::uint64_t qdim = c.query_source == pooling::QuerySource::learned_query_q ? da : di;
    if (c.query_norm == pooling::QueryNorm::layernorm) attention += nf * qdim;
    if (c.has_query_projection()) {
      attention += mac(da, di, 1);
      if (c.bias.query) attention += ew * da;
    }
    // key projection; shared key/value weights produce the values here too
    std::uint64_t key_rows = di;
    if (c.key_transform == pooling::Transform::learned) {
      key_rows = da;
      attention += mac(da, di, n);
      if (c.share_key_value ? c.bias.value : c.bias.key) attention += ew * da * n;
    }
    if (c.key_nonlinearity == pooling::KeyNonlinearity::relu) attention += ew * key_rows * n;
    // logits
    if (c.query_source == pooling::QuerySource::learned_queries_u_j) {
      attention += mac(m, di, n);
    } else {
      attention += mac(da, n, 1);
    }
    if (c.logit_scale != 1.0) attention += ew * m * n;
    if (c.bias.attn) attention += ew * m * n;

    normalize = nf * m * n;
    if (c.mixing) normalize += nf * maps * m + mac(maps, m, n);

    if (c.values_per_token()) {
      if (!c.share_key_value) {
        value += mac(dout, di, n);
        if (c.bias.value) value += ew * dout * n;
      }
      value += mac(dout, n, 1);
    } else if (c.value_transform == pooling::Transform::identity) {
      value += mac(maps == 1 ? di : dout, n, 1);
    } else {
      value += mac(di, n, maps) + mac(dout, di, 1);
      if (c.bias.value) value += ew * dout;
    }
  }

  if (c.post_block != pooling::PostBlock::none) {
    const std::uint64_t f = c.feature_dim();
    post += mac(f, dout, 1);
    if (c.bias.proj) post += ew * f;
    if (c.post_block == pooling::PostBlock::proj_mlp_residual) {
      const std::uint64_t h = f * c.mlp_ratio;
      post += nf * f;
      post += mac(h, f, 1) + nf * h + mac(f, h, 1);
      if (c.bias.mlp) post += ew * (h + f);
      post += ew * f;  // residual
    }
  }

  CostBreakdown out;
  out.flops = {{"input_norm", input_norm},
               {"attention", attention},
               {"normalize", normalize},
               {"value", value},
               {"post_block", post}};
  for (const auto& [stage, f] : out.flops) out.total_flops += f;
  return out;
}

CostBreakdown full_cost(const PoolConfig& config, std::uint32_t classes, std::uint32_t tokens) {
  CostBreakdown out = param_count(config, classes);
  const CostBreakdown f = flop_count(config, tokens);
  out.flops = f.flops;
  out.total_flops = f.total_flops;
  return out;
}

nlohmann::ordered_json to_json(const CostBreakdown& cost) {
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [name, n] : cost.params) params[name] = n;
  nlohmann::ordered_json flops = nlohmann::ordered_json::object();
  for (const auto& [stage, n] : cost.flops) flops[stage] = n;
  return {{"params", params},
          {"total_params", cost.total_params},
          {"flops", flops},
          {"total_flops", cost.total_flops}};
}

std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points) {
  if (points.empty()) throw ValidationError("pareto frontier of an empty set");
  for (const auto& p : points)
    if (!std::isfinite(p.accuracy) || !std::isfinite(p.cost))
      throw ValidationError("pareto point '" + p.label + "' is not finite");
  std::vector<ParetoPoint> out;
  for (const auto& p : points) {
    const bool dominated = std::ranges::any_of(points, [&](const ParetoPoint& q) {
      return q.cost <= p.cost && q.accuracy >= p.accuracy && (q.cost < p.cost || q.accuracy > p.accuracy);
    });
    if (!dominated) out.push_back(p);
  }
  std::ranges::stable_sort(out, [](const ParetoPoint& a, const ParetoPoint& b) { return a.cost < b.cost; });
  return out;
}

}  // namespace probekit::cost
