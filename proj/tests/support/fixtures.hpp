#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "probekit/data/feature_set.hpp"
#include "probekit/pooling/params.hpp"
#include "probekit/training/loss.hpp"
#include "probekit/training/train.hpp"

namespace probekit::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// Replaces every learnable tensor with N(0, scale^2) noise so gradients are
/// far from the symmetric initial point; BN statistics stay valid.
inline void randomize(pooling::PoolParams& p, std::mt19937_64& rng, double scale = 0.5) {
  for (const auto& slot : pooling::kPoolSlots) {
    auto& m = p.*(slot.member);
    if (!m) continue;
    if (slot.name == "bn.running_var") {
      *m = random_matrix(m->rows(), m->cols(), rng).array().abs() + 0.5;
    } else {
      *m = random_matrix(m->rows(), m->cols(), rng, scale);
    }
  }
}

inline void randomize(training::Probe& probe, std::mt19937_64& rng, double scale = 0.5) {
  randomize(probe.pool, rng, scale);
  for (auto& c : probe.classifiers) {
    c.weight = random_matrix(c.weight.rows(), c.weight.cols(), rng, scale);
    c.bias = random_matrix(c.bias.rows(), c.bias.cols(), rng, scale);
  }
}

inline std::vector<data::Sample> random_samples(std::size_t count, Eigen::Index dim, Eigen::Index tokens,
                                                std::mt19937_64& rng, bool with_cls = false) {
  std::vector<data::Sample> out(count);
  for (auto& s : out) {
    s.x = random_matrix(dim, tokens, rng);
    if (with_cls) s.cls = random_matrix(dim, 1, rng).col(0);
  }
  return out;
}

/// |a - f| / max(|a|, |f|, floor), maximised over every scalar.
inline double max_relative_error(const training::Gradients& analytic, const training::Gradients& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t s = 0; s < analytic.slots.size(); ++s) {
    const auto& a = analytic.slots[s];
    const auto& f = numeric.slots[s];
    if (a.size() != f.size()) return INFINITY;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double denom = std::max({std::abs(a.data()[i]), std::abs(f.data()[i]), floor});
      worst = std::max(worst, std::abs(a.data()[i] - f.data()[i]) / denom);
    }
  }
  return worst;
}

}  // namespace probekit::testing
