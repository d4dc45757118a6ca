#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace probekit::pooling {

enum class Method {
  gap,
  cls,
  mhca,
  mhca_lq,
  mhca_idk,
  ep,
  abmilp,
  aim,
  delf,
  simpool,
  vjepa,
  cae,
  siglip,
  coca,
};

enum class InputNorm { none, batchnorm, layernorm };
enum class QueryNorm { none, layernorm };
enum class QuerySource { learned_vector_u, learned_query_q, learned_queries_u_j, data_mean };
enum class Transform { identity, learned };
enum class KeyNonlinearity { none, relu };
enum class Normalizer { softmax, softplus };
enum class PostBlock { none, proj, proj_mlp_residual };

struct BiasFlags {
  bool query = false;  ///< b_Q on the query projection
  bool key = false;    ///< b_K
  bool value = false;  ///< b_V
  bool attn = false;   ///< one scalar per predictor added to its logits
  bool proj = true;    ///< b_P
  bool mlp = true;     ///< b_1, b_2

  friend bool operator==(const BiasFlags&, const BiasFlags&) = default;
};

/// Declarative description of one attentive-pooling variant. Presets from
/// make_config() reproduce the method zoo; any switch can be overridden
/// afterwards, and validate() enforces the structural constraints.
struct PoolConfig {
  Method method = Method::ep;
  std::uint32_t heads = 1;     ///< attention predictors (heads or queries)
  std::uint32_t in_dim = 0;    ///< channels of the frozen tokens
  std::uint32_t attn_dim = 0;  ///< query/key width, split across heads
  std::uint32_t out_dim = 0;   ///< value width, split across pooled maps
  InputNorm input_norm = InputNorm::none;
  QueryNorm query_norm = QueryNorm::none;
  QuerySource query_source = QuerySource::learned_queries_u_j;
  Transform key_transform = Transform::identity;
  Transform value_transform = Transform::learned;
  KeyNonlinearity key_nonlinearity = KeyNonlinearity::none;
  Normalizer normalizer = Normalizer::softmax;
  double logit_scale = 1.0;
  PostBlock post_block = PostBlock::none;
  bool share_key_value = false;
  std::optional<std::uint32_t> mixing;  ///< number of mixed maps, when mixing
  BiasFlags bias;
  std::uint32_t proj_dim = 0;   ///< width after the post projection; 0 keeps out_dim
  std::uint32_t mlp_ratio = 4;  ///< hidden width of the post MLP, times its input

  /// Attention maps used for pooling (mixed count when mixing is on).
  [[nodiscard]] std::uint32_t pooled_maps() const { return mixing.value_or(heads); }
  /// Rows of the value features before the post block.
  [[nodiscard]] std::uint32_t value_dim() const;
  /// Length of the feature handed to the classifier.
  [[nodiscard]] std::uint32_t feature_dim() const;
  /// Whether the query is projected by W_Q before meeting the keys.
  [[nodiscard]] bool has_query_projection() const;
  /// Whether the value projection runs per token (fused with a learned key
  /// projection) rather than after aggregation.
  [[nodiscard]] bool values_per_token() const;
  [[nodiscard]] bool uses_attention() const {
    return method != Method::gap && method != Method::cls;
  }

  void validate() const;

  friend bool operator==(const PoolConfig&, const PoolConfig&) = default;
};

/// Zoo preset. `out_dim`/`attn_dim` default to `in_dim` (CoCa defaults to a
/// halved out_dim and attn_dim, and projects back to in_dim).
PoolConfig make_config(Method method, std::uint32_t in_dim, std::uint32_t heads,
                       std::optional<std::uint32_t> out_dim = std::nullopt,
                       std::optional<std::uint32_t> attn_dim = std::nullopt);

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

nlohmann::ordered_json to_json(const PoolConfig& c);
PoolConfig config_from_json(const nlohmann::json& j);

}  // namespace probekit::pooling
