#include "probekit/analysis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "probekit/common/error.hpp"
#include "probekit/training/train.hpp"

namespace probekit::analysis {

namespace {

constexpr double kSumTolerance = 1e-6;

void require_distribution(const Eigen::VectorXd& a) {
  if (a.size() == 0) throw ValidationError("empty attention vector");
  if (!a.allFinite() || (a.array() < 0.0).any())
    throw ValidationError("attention must be finite and nonnegative");
  if (std::abs(a.sum() - 1.0) > kSumTolerance)
    throw ValidationError("attention must sum to 1 (got " + std::to_string(a.sum()) + ")");
}

Matrix unit_columns(const Matrix& f) {
  Matrix out = f;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double norm = out.col(j).norm();
    if (norm > 0.0) out.col(j) /= norm;
  }
  return out;
}

/// Indices of `sims` sorted by decreasing similarity, lower index first on ties.
std::vector<std::size_t> ranked(const Eigen::VectorXd& sims) {
  std::vector<std::size_t> order(static_cast<std::size_t>(sims.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return sims(static_cast<Eigen::Index>(a)) > sims(static_cast<Eigen::Index>(b));
  });
  return order;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double attention_entropy(const Eigen::VectorXd& a) {
  require_distribution(a);
  double h = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a(i) > 0.0) h -= a(i) * std::log(a(i));
  return h;
}

double bbox_mass(const Eigen::VectorXd& a, std::uint32_t grid_w, std::uint32_t grid_h,
                 std::span<const data::BBox> boxes) {
  require_distribution(a);
  if (static_cast<Eigen::Index>(grid_w) * grid_h != a.size())
    throw ValidationError("grid " + std::to_string(grid_w) + "x" + std::to_string(grid_h) +
                          " does not match " + std::to_string(a.size()) + " tokens");
  if (boxes.empty()) throw ValidationError("bbox mass needs at least one box");
  std::vector<bool> covered(static_cast<std::size_t>(a.size()), false);
  for (const auto& b : boxes) {
    if (b.xmin > b.xmax || b.ymin > b.ymax || b.xmax >= grid_w || b.ymax >= grid_h)
      throw ValidationError("bounding box outside the patch grid");
    for (std::uint32_t y = b.ymin; y <= b.ymax; ++y)
      for (std::uint32_t x = b.xmin; x <= b.xmax; ++x) covered[static_cast<std::size_t>(y) * grid_w + x] = true;
  }
  double mass = 0.0;
  for (Eigen::Index t = 0; t < a.size(); ++t)
    if (covered[static_cast<std::size_t>(t)]) mass += a(t);
  return mass;
}

double complementarity(const Matrix& attention, ComplementarityMode mode) {
  const Eigen::Index m = attention.rows();
  if (m < 2) throw ValidationError("complementarity needs at least two predictors (M >= 2)");
  if (!attention.allFinite() || (attention.array() < 0.0).any())
    throw ValidationError("complementarity needs finite nonnegative maps");
  // dot / sqrt(|a|^2 |b|^2) keeps identical rows at exactly 1: sqrt(x * x) == x
  // in IEEE arithmetic, and each dot is evaluated in the same order.
  Eigen::VectorXd sq(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    sq(i) = attention.row(i).dot(attention.row(i));
    if (sq(i) == 0.0) throw ValidationError("complementarity: attention row " + std::to_string(i) + " is all zero");
  }
  Matrix cos(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) cos(i, j) = attention.row(i).dot(attention.row(j)) / std::sqrt(sq(i) * sq(j));
  double sum = 0.0;
  double max = -1.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) {
        sum += cos(i, j);
        max = std::max(max, cos(i, j));
      }
  const double mean = sum / static_cast<double>(m * (m - 1));
  return 1.0 - (mode == ComplementarityMode::avg ? mean : max);
}

double uniform_replacement_delta(const training::Probe& probe, std::span<const data::Sample> samples,
                                 std::span<const std::uint32_t> labels, std::uint32_t predictor,
                                 std::span<const std::size_t> indices) {
  if (!probe.config.uses_attention() || predictor >= probe.config.heads)
    throw ValidationError("predictor " + std::to_string(predictor) + " out of range for M = " +
                          std::to_string(probe.config.uses_attention() ? probe.config.heads : 0));
  pooling::ForwardOptions replaced;
  replaced.uniform_row = predictor;
  return training::evaluate(probe, samples, labels, indices) -
         training::evaluate(probe, samples, labels, indices, std::nullopt, replaced);
}

double knn_eval(const Matrix& train_features, std::span<const std::uint32_t> train_labels,
                const Matrix& query_features, std::span<const std::uint32_t> query_labels, std::size_t k) {
  if (train_features.cols() == 0 || query_features.cols() == 0)
    throw ValidationError("k-NN needs nonempty train and query sets");
  if (static_cast<std::size_t>(train_features.cols()) != train_labels.size() ||
      static_cast<std::size_t>(query_features.cols()) != query_labels.size())
    throw ValidationError("k-NN features and labels differ in length");
  if (train_features.rows() != query_features.rows())
    throw ValidationError("k-NN train and query features differ in width");
  if (k < 1 || k > train_labels.size())
    throw ValidationError("k must lie in [1, " + std::to_string(train_labels.size()) + "]");

  const Matrix sims = unit_columns(query_features).transpose() * unit_columns(train_features);
  std::size_t correct = 0;
  for (Eigen::Index q = 0; q < sims.rows(); ++q) {
    const auto order = ranked(sims.row(q).transpose());
    std::map<std::uint32_t, std::pair<std::size_t, double>> votes;  // label -> (count, summed sim)
    for (std::size_t i = 0; i < k; ++i) {
      auto& v = votes[train_labels[order[i]]];
      ++v.first;
      v.second += sims(q, static_cast<Eigen::Index>(order[i]));
    }
    auto best = votes.begin();
    for (auto it = votes.begin(); it != votes.end(); ++it)
      if (it->second.first > best->second.first ||
          (it->second.first == best->second.first && it->second.second > best->second.second))
        best = it;
    if (best->first == query_labels[static_cast<std::size_t>(q)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(query_labels.size());
}

std::vector<double> recall_at_k(const Matrix& features, std::span<const std::uint32_t> labels,
                                std::span<const std::size_t> ks) {
  const auto s = static_cast<std::size_t>(features.cols());
  if (s < 2) throw ValidationError("recall@K needs at least two samples");
  if (labels.size() != s) throw ValidationError("recall@K features and labels differ in length");
  for (auto k : ks)
    if (k < 1 || k >= s)
      throw ValidationError("K = " + std::to_string(k) + " must lie in [1, " + std::to_string(s - 1) + "]");

  const Matrix unit = unit_columns(features);
  const Matrix sims = unit.transpose() * unit;
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t q = 0; q < s; ++q) {
    Eigen::VectorXd row = sims.row(static_cast<Eigen::Index>(q)).transpose();
    const auto order = ranked(row);
    // Rank (among the others) of the first same-class neighbour.
    std::size_t rank = 0;
    std::size_t first_hit = s;
    for (auto i : order) {
      if (i == q) continue;
      ++rank;
      if (labels[i] == labels[q]) {
        first_hit = rank;
        break;
      }
    }
    for (std::size_t j = 0; j < ks.size(); ++j)
      if (first_hit <= ks[j]) ++hits[j];
  }
  std::vector<double> out;
  for (auto h : hits) out.push_back(static_cast<double>(h) / static_cast<double>(s));
  return out;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman needs two equal-length series (n >= 2)");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

Eigen::VectorXd l1_normalized(const Eigen::VectorXd& a) {
  const double s = a.sum();
  if (!(s > 0.0)) throw ValidationError("cannot normalize an attention vector with zero mass");
  return a / s;
}

}  // namespace probekit::analysis
