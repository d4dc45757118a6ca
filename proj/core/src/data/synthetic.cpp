#include "probekit/data/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"

namespace probekit::data {

void SynthSpec::validate() const {
  if (classes < 1 || samples_per_class < 1 || tokens < 1 || channels < 1 ||
      fg_tokens_per_sample < 1) {
    throw ValidationError("SynthSpec: all counts must be >= 1");
  }
  if (fg_tokens_per_sample > tokens) {
    throw ValidationError("SynthSpec: fg_tokens_per_sample exceeds tokens");
  }
  if (!(noise_std > 0.0)) throw ValidationError("SynthSpec: noise_std must be > 0");
  if (!(fg_mean_scale >= 0.0)) throw ValidationError("SynthSpec: fg_mean_scale must be >= 0");
  if (static_cast<std::uint64_t>(grid_w) * grid_h != tokens) {
    throw ValidationError("SynthSpec: grid_w * grid_h must equal tokens");
  }
}

Eigen::MatrixXd synthetic_class_means(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth/means"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd means(spec.classes, spec.channels);
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    for (Eigen::Index d = 0; d < means.cols(); ++d) means(c, d) = normal(rng);
  }
  const bool orthogonalize = spec.classes <= spec.channels;
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    if (orthogonalize) {
      for (Eigen::Index p = 0; p < c; ++p) {
        means.row(c) -= means.row(c).dot(means.row(p)) * means.row(p);
      }
    }
    means.row(c).normalize();
  }
  return means * spec.fg_mean_scale;
}

FeatureSet generate_synthetic(const SynthSpec& spec) {
  const Eigen::MatrixXd means = synthetic_class_means(spec);
  FeatureSet set;
  set.samples = spec.classes * spec.samples_per_class;
  set.tokens = spec.tokens;
  set.channels = spec.channels;
  set.num_classes = spec.classes;
  set.grid_w = spec.grid_w;
  set.grid_h = spec.grid_h;
  set.features.resize(static_cast<std::size_t>(set.samples) * set.tokens * set.channels);
  set.labels.resize(set.samples);
  set.bboxes.emplace(set.samples);

  Rng rng(derive_seed(spec.seed, "synth/samples"));
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::vector<std::uint32_t> positions(spec.tokens);

  std::size_t s = 0;
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (std::uint32_t i = 0; i < spec.samples_per_class; ++i, ++s) {
      set.labels[s] = c;
      float* base = set.features.data() + s * spec.tokens * spec.channels;
      for (std::size_t k = 0; k < static_cast<std::size_t>(spec.tokens) * spec.channels; ++k) {
        base[k] = static_cast<float>(noise(rng));
      }
      // Partial Fisher-Yates: the first fg entries are a uniform draw without
      // replacement.
      std::iota(positions.begin(), positions.end(), 0u);
      for (std::uint32_t k = 0; k < spec.fg_tokens_per_sample; ++k) {
        std::uniform_int_distribution<std::uint32_t> pick(k, spec.tokens - 1);
        std::swap(positions[k], positions[pick(rng)]);
      }
      std::vector<std::uint32_t> fg(positions.begin(),
                                    positions.begin() + spec.fg_tokens_per_sample);
      std::sort(fg.begin(), fg.end());
      auto& boxes = (*set.bboxes)[s];
      for (auto t : fg) {
        float* token = base + static_cast<std::size_t>(t) * spec.channels;
        for (std::uint32_t d = 0; d < spec.channels; ++d) {
          token[d] = static_cast<float>(means(c, d) + noise(rng));
        }
        const std::uint32_t x = t % spec.grid_w;
        const std::uint32_t y = t / spec.grid_w;
        boxes.push_back(BBox{x, y, x, y});
      }
    }
  }
  set.validate();
  return set;
}

}  // namespace probekit::data
