#include "probekit/pooling/config.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <string>
#include <utility>

#include "probekit/common/error.hpp"

namespace probekit::pooling {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 14> kMethodNames{{
    {Method::gap, "gap"},
    {Method::cls, "cls"},
    {Method::mhca, "mhca"},
    {Method::mhca_lq, "mhca_lq"},
    {Method::mhca_idk, "mhca_idk"},
    {Method::ep, "ep"},
    {Method::abmilp, "abmilp"},
    {Method::aim, "aim"},
    {Method::delf, "delf"},
    {Method::simpool, "simpool"},
    {Method::vjepa, "vjepa"},
    {Method::cae, "cae"},
    {Method::siglip, "siglip"},
    {Method::coca, "coca"},
}};

template <typename E, std::size_t K>
std::string_view name_of(E value, const std::array<std::pair<E, std::string_view>, K>& table) {
  for (const auto& [v, n] : table)
    if (v == value) return n;
  return "?";
}

template <typename E, std::size_t K>
E parse_enum(std::string_view text, const std::array<std::pair<E, std::string_view>, K>& table,
             std::string_view what) {
  std::string lower(text);
  std::ranges::transform(lower, lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [v, n] : table)
    if (n == lower) return v;
  throw ValidationError("unknown " + std::string(what) + " '" + std::string(text) + "'");
}

constexpr std::array<std::pair<InputNorm, std::string_view>, 3> kInputNorms{{
    {InputNorm::none, "none"}, {InputNorm::batchnorm, "batchnorm"}, {InputNorm::layernorm, "layernorm"}}};
constexpr std::array<std::pair<QueryNorm, std::string_view>, 2> kQueryNorms{{
    {QueryNorm::none, "none"}, {QueryNorm::layernorm, "layernorm"}}};
constexpr std::array<std::pair<QuerySource, std::string_view>, 4> kQuerySources{{
    {QuerySource::learned_vector_u, "learned_vector_u"},
    {QuerySource::learned_query_q, "learned_query_q"},
    {QuerySource::learned_queries_u_j, "learned_queries_u_j"},
    {QuerySource::data_mean, "data_mean"}}};
constexpr std::array<std::pair<Transform, std::string_view>, 2> kTransforms{{
    {Transform::identity, "identity"}, {Transform::learned, "learned"}}};
constexpr std::array<std::pair<KeyNonlinearity, std::string_view>, 2> kKeyNonlinearities{{
    {KeyNonlinearity::none, "none"}, {KeyNonlinearity::relu, "relu"}}};
constexpr std::array<std::pair<Normalizer, std::string_view>, 2> kNormalizers{{
    {Normalizer::softmax, "softmax"}, {Normalizer::softplus, "softplus"}}};
constexpr std::array<std::pair<PostBlock, std::string_view>, 3> kPostBlocks{{
    {PostBlock::none, "none"}, {PostBlock::proj, "proj"}, {PostBlock::proj_mlp_residual, "proj_mlp_residual"}}};

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError("pool config: " + message);
}

}  // namespace

std::string_view to_string(Method m) { return name_of(m, kMethodNames); }

Method method_from_string(std::string_view s) { return parse_enum(s, kMethodNames, "method"); }

std::uint32_t PoolConfig::value_dim() const { return out_dim; }

std::uint32_t PoolConfig::feature_dim() const {
  if (post_block == PostBlock::none) return out_dim;
  return proj_dim == 0 ? out_dim : proj_dim;
}

bool PoolConfig::has_query_projection() const {
  return uses_attention() && key_transform == Transform::learned &&
         (query_source == QuerySource::learned_vector_u || query_source == QuerySource::data_mean);
}

bool PoolConfig::values_per_token() const {
  return uses_attention() && key_transform == Transform::learned &&
         value_transform == Transform::learned;
}

void PoolConfig::validate() const {
  require(in_dim >= 1, "D_i must be >= 1");
  require(out_dim >= 1, "D_o must be >= 1");
  require(heads >= 1, "M must be >= 1");
  require(std::isfinite(logit_scale), "logit_scale must be finite");
  if (value_transform == Transform::identity)
    require(out_dim == in_dim, "identity value requires D_o = D_i");
  if (post_block == PostBlock::proj_mlp_residual) require(mlp_ratio >= 1, "mlp_ratio must be >= 1");

  if (!uses_attention()) {
    require(heads == 1, "GAP/CLS use a single uniform predictor (M = 1)");
    require(!mixing, "GAP/CLS have no attention to mix");
    if (method == Method::cls) {
      require(value_transform == Transform::identity, "CLS has no value transform");
      require(input_norm == InputNorm::none, "CLS has no input normalization");
    }
    return;
  }

  require(attn_dim >= 1, "D_a must be >= 1");
  require(out_dim % pooled_maps() == 0, "the pooled map count must divide D_o");
  if (mixing) {
    require(*mixing >= 1, "mixing needs at least one output map");
    require(normalizer == Normalizer::softmax, "mixing combines normalized (softmax) maps");
  }

  if (query_source == QuerySource::learned_queries_u_j) {
    require(key_transform == Transform::identity, "per-predictor queries u_j require an identity key");
    require(query_norm == QueryNorm::none, "query normalization needs a single query vector");
  } else {
    require(attn_dim % heads == 0, "M must divide D_a");
    if (key_transform == Transform::identity) {
      require(attn_dim == in_dim, "identity key requires D_a = D_i");
      require(query_source != QuerySource::data_mean, "a data-mean query needs a key projection");
    }
  }

  if (share_key_value) {
    require(key_transform == Transform::learned && value_transform == Transform::learned,
            "shared key/value weights need learned key and value");
    require(attn_dim == out_dim, "shared key/value weights need D_a = D_o");
  }

  switch (method) {
    case Method::ep:
      require(key_transform == Transform::identity &&
                  query_source == QuerySource::learned_queries_u_j,
              "EP requires identity key and learned queries u_j");
      break;
    case Method::abmilp:
      require(heads == 1, "ABMILP requires M = 1");
      require(key_transform == Transform::identity && value_transform == Transform::identity,
              "ABMILP requires identity key and value");
      break;
    case Method::mhca_idk:
      require(key_transform == Transform::identity, "MHCA_IDK requires identity key");
      break;
    default:
      break;
  }
}

PoolConfig make_config(Method method, std::uint32_t in_dim, std::uint32_t heads,
                       std::optional<std::uint32_t> out_dim, std::optional<std::uint32_t> attn_dim) {
  PoolConfig c;
  c.method = method;
  c.in_dim = in_dim;
  c.heads = heads;
  c.attn_dim = attn_dim.value_or(in_dim);
  c.out_dim = out_dim.value_or(in_dim);
  c.query_source = QuerySource::learned_query_q;
  c.key_transform = Transform::learned;
  c.value_transform = Transform::learned;

  switch (method) {
    case Method::gap:
    case Method::cls:
      c.heads = 1;
      c.key_transform = Transform::identity;
      c.value_transform = Transform::identity;
      c.out_dim = out_dim.value_or(in_dim);
      break;
    case Method::mhca:
      c.query_source = QuerySource::learned_vector_u;
      break;
    case Method::mhca_lq:
      break;
    case Method::mhca_idk:
      c.key_transform = Transform::identity;
      c.attn_dim = in_dim;
      break;
    case Method::ep:
      c.query_source = QuerySource::learned_queries_u_j;
      c.key_transform = Transform::identity;
      break;
    case Method::abmilp:
      c.heads = 1;
      c.query_source = QuerySource::learned_vector_u;
      c.key_transform = Transform::identity;
      c.value_transform = Transform::identity;
      c.attn_dim = in_dim;
      c.out_dim = in_dim;
      c.bias.attn = true;
      break;
    case Method::aim:
      c.input_norm = InputNorm::batchnorm;
      break;
    case Method::delf:
      c.heads = 1;
      c.share_key_value = true;
      c.key_nonlinearity = KeyNonlinearity::relu;
      c.normalizer = Normalizer::softplus;
      c.attn_dim = c.out_dim;
      c.bias.value = true;
      break;
    case Method::simpool:
      c.heads = 1;
      c.input_norm = InputNorm::layernorm;
      c.query_source = QuerySource::data_mean;
      c.value_transform = Transform::identity;
      c.out_dim = in_dim;
      break;
    case Method::vjepa:
      c.input_norm = InputNorm::layernorm;
      c.post_block = PostBlock::proj_mlp_residual;
      break;
    case Method::cae:
      c.input_norm = InputNorm::layernorm;
      c.query_norm = QueryNorm::layernorm;
      c.query_source = QuerySource::learned_vector_u;
      c.post_block = PostBlock::proj;
      break;
    case Method::siglip:
      c.query_source = QuerySource::learned_vector_u;
      c.post_block = PostBlock::proj_mlp_residual;
      break;
    case Method::coca:
      c.query_norm = QueryNorm::layernorm;
      c.query_source = QuerySource::learned_vector_u;
      c.out_dim = out_dim.value_or(std::max<std::uint32_t>(1, in_dim / 2));
      c.attn_dim = attn_dim.value_or(c.out_dim);
      c.post_block = PostBlock::proj;
      c.proj_dim = in_dim;
      break;
  }
  return c;
}

nlohmann::ordered_json to_json(const PoolConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = to_string(c.method);
  j["M"] = c.heads;
  j["D_i"] = c.in_dim;
  j["D_a"] = c.attn_dim;
  j["D_o"] = c.out_dim;
  j["input_norm"] = name_of(c.input_norm, kInputNorms);
  j["query_norm"] = name_of(c.query_norm, kQueryNorms);
  j["query_source"] = name_of(c.query_source, kQuerySources);
  j["key_transform"] = name_of(c.key_transform, kTransforms);
  j["value_transform"] = name_of(c.value_transform, kTransforms);
  j["key_nonlinearity"] = name_of(c.key_nonlinearity, kKeyNonlinearities);
  j["normalizer"] = name_of(c.normalizer, kNormalizers);
  j["logit_scale"] = c.logit_scale;
  j["post_block"] = name_of(c.post_block, kPostBlocks);
  j["share_key_value"] = c.share_key_value;
  j["mixing"] = c.mixing ? nlohmann::ordered_json(*c.mixing) : nlohmann::ordered_json(nullptr);
  j["bias"] = {{"query", c.bias.query}, {"key", c.bias.key},   {"value", c.bias.value},
               {"attn", c.bias.attn},   {"proj", c.bias.proj}, {"mlp", c.bias.mlp}};
  j["proj_dim"] = c.proj_dim;
  j["mlp_ratio"] = c.mlp_ratio;
  return j;
}

PoolConfig config_from_json(const nlohmann::json& j) {
  try {
    PoolConfig c;
    c.method = method_from_string(j.at("method").get<std::string>());
    c.heads = j.at("M").get<std::uint32_t>();
    c.in_dim = j.at("D_i").get<std::uint32_t>();
    c.attn_dim = j.at("D_a").get<std::uint32_t>();
    c.out_dim = j.at("D_o").get<std::uint32_t>();
    c.input_norm = parse_enum(j.at("input_norm").get<std::string>(), kInputNorms, "input_norm");
    c.query_norm = parse_enum(j.value("query_norm", std::string("none")), kQueryNorms, "query_norm");
    c.query_source = parse_enum(j.at("query_source").get<std::string>(), kQuerySources, "query_source");
    c.key_transform = parse_enum(j.at("key_transform").get<std::string>(), kTransforms, "key_transform");
    c.value_transform =
        parse_enum(j.at("value_transform").get<std::string>(), kTransforms, "value_transform");
    c.key_nonlinearity = parse_enum(j.at("key_nonlinearity").get<std::string>(), kKeyNonlinearities,
                                    "key_nonlinearity");
    c.normalizer = parse_enum(j.at("normalizer").get<std::string>(), kNormalizers, "normalizer");
    c.logit_scale = j.value("logit_scale", 1.0);
    c.post_block = parse_enum(j.at("post_block").get<std::string>(), kPostBlocks, "post_block");
    c.share_key_value = j.value("share_key_value", false);
    if (j.contains("mixing") && !j.at("mixing").is_null()) c.mixing = j.at("mixing").get<std::uint32_t>();
    if (j.contains("bias")) {
      const auto& b = j.at("bias");
      c.bias.query = b.value("query", false);
      c.bias.key = b.value("key", false);
      c.bias.value = b.value("value", false);
      c.bias.attn = b.value("attn", false);
      c.bias.proj = b.value("proj", true);
      c.bias.mlp = b.value("mlp", true);
    }
    c.proj_dim = j.value("proj_dim", 0U);
    c.mlp_ratio = j.value("mlp_ratio", 4U);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pool config JSON: ") + e.what());
  }
}

}  // namespace probekit::pooling
