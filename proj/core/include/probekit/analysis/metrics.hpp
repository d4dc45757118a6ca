#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "probekit/data/feature_set.hpp"
#include "probekit/pooling/forward.hpp"
#include "probekit/training/probe.hpp"

namespace probekit::analysis {

using Matrix = Eigen::MatrixXd;

/// -sum a_i ln a_i in nats, with 0 ln 0 = 0. `a` must be a distribution.
double attention_entropy(const Eigen::VectorXd& a);

/// Attention mass on the union of grid cells covered by `boxes`. Token t is
/// the cell (t mod grid_w, t div grid_w).
double bbox_mass(const Eigen::VectorXd& a, std::uint32_t grid_w, std::uint32_t grid_h,
                 std::span<const data::BBox> boxes);

enum class ComplementarityMode { avg, max };

/// 1 - mean (or max) off-diagonal cosine similarity of the rows of A.
double complementarity(const Matrix& attention, ComplementarityMode mode = ComplementarityMode::avg);

/// top-1 accuracy minus top-1 accuracy with predictor j's attention forced
/// to 1/N on every sample.
double uniform_replacement_delta(const training::Probe& probe, std::span<const data::Sample> samples,
                                 std::span<const std::uint32_t> labels, std::uint32_t predictor,
                                 std::span<const std::size_t> indices = {});

inline constexpr std::size_t kDefaultKnnK = 20;

/// Cosine k-NN: majority vote among the k most similar training features
/// (one column per sample); vote ties go to the larger summed similarity,
/// then the lower label. Returns top-1 accuracy on the queries.
double knn_eval(const Matrix& train_features, std::span<const std::uint32_t> train_labels,
                const Matrix& query_features, std::span<const std::uint32_t> query_labels, std::size_t k);

/// Fraction of samples with a same-class item among their K most similar
/// other samples (cosine, self excluded), for each K.
std::vector<double> recall_at_k(const Matrix& features, std::span<const std::uint32_t> labels,
                                std::span<const std::size_t> ks);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// Scales a nonnegative vector to unit sum (for unnormalized softplus maps).
Eigen::VectorXd l1_normalized(const Eigen::VectorXd& a);

}  // namespace probekit::analysis
