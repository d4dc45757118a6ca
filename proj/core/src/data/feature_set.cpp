#include "probekit/data/feature_set.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "probekit/common/error.hpp"

namespace probekit::data {

void FeatureSet::validate() const {
  const auto fail = [](const std::string& what) { throw ValidationError("FeatureSet: " + what); };
  if (num_classes == 0) fail("num_classes must be >= 1");
  if ((grid_w == 0) != (grid_h == 0)) fail("grid_w and grid_h must both be zero or both non-zero");
  if (grid_w != 0 && static_cast<std::uint64_t>(grid_w) * grid_h != tokens) {
    fail("grid_w * grid_h must equal tokens");
  }
  const std::size_t expected = static_cast<std::size_t>(samples) * tokens * channels;
  if (features.size() != expected) fail("feature count does not match S*N*D");
  if (labels.size() != samples) fail("label count does not match S");
  for (auto l : labels) {
    if (l >= num_classes) fail("label " + std::to_string(l) + " out of range");
  }
  for (float v : features) {
    if (!std::isfinite(v)) fail("non-finite feature value");
  }
  if (cls_tokens) {
    if (cls_tokens->size() != static_cast<std::size_t>(samples) * channels) {
      fail("cls token count does not match S*D");
    }
    for (float v : *cls_tokens) {
      if (!std::isfinite(v)) fail("non-finite cls value");
    }
  }
  if (bboxes) {
    if (bboxes->size() != samples) fail("bbox list count does not match S");
    if (grid_w == 0 && !std::all_of(bboxes->begin(), bboxes->end(),
                                    [](const auto& b) { return b.empty(); })) {
      fail("bboxes require a patch grid");
    }
    for (const auto& boxes : *bboxes) {
      for (const auto& b : boxes) {
        if (b.xmin > b.xmax || b.ymin > b.ymax || b.xmax >= grid_w || b.ymax >= grid_h) {
          fail("bbox outside the patch grid");
        }
      }
    }
  }
}

std::span<const float> FeatureSet::sample_span(std::size_t s) const {
  const std::size_t stride = static_cast<std::size_t>(tokens) * channels;
  return std::span<const float>(features).subspan(s * stride, stride);
}

Eigen::MatrixXd FeatureSet::sample_matrix(std::size_t s) const {
  const auto src = sample_span(s);
  // Row-major N x D in memory is column-major D x N.
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>> m(src.data(), channels,
                                                                           tokens);
  return m.cast<double>();
}

std::optional<Eigen::VectorXd> FeatureSet::cls_vector(std::size_t s) const {
  if (!cls_tokens) return std::nullopt;
  Eigen::Map<const Eigen::VectorXf> v(cls_tokens->data() + s * channels, channels);
  return v.cast<double>();
}

std::vector<std::size_t> FeatureSet::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) ++counts[l];
  return counts;
}

std::vector<Sample> materialize(const FeatureSet& set) {
  std::vector<Sample> out;
  out.reserve(set.samples);
  for (std::size_t s = 0; s < set.samples; ++s) {
    out.push_back(Sample{set.sample_matrix(s), set.cls_vector(s)});
  }
  return out;
}

}  // namespace probekit::data
