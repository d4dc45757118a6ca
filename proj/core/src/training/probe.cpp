#include "probekit/training/probe.hpp"

#include <string>

#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"

namespace probekit::training {

Classifier init_classifier(std::uint32_t classes, std::uint32_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Classifier c;
  c.weight.resize(classes, dim);
  for (Eigen::Index j = 0; j < c.weight.cols(); ++j)
    for (Eigen::Index i = 0; i < c.weight.rows(); ++i) c.weight(i, j) = truncated_normal(rng, 0.01);
  c.bias = Matrix::Zero(classes, 1);
  return c;
}

Eigen::VectorXd classify(const Classifier& clf, const Eigen::VectorXd& y,
                         std::optional<std::size_t> prefix_dim) {
  const auto d = static_cast<Eigen::Index>(prefix_dim.value_or(static_cast<std::size_t>(clf.dim())));
  if (d < 1 || d > clf.dim() || y.size() < d)
    throw ValidationError("classify: prefix " + std::to_string(d) + " does not fit a classifier of width " +
                          std::to_string(clf.dim()) + " and a feature of length " +
                          std::to_string(y.size()));
  if (!prefix_dim && y.size() != clf.dim())
    throw ValidationError("classify: feature length " + std::to_string(y.size()) +
                          " does not match classifier width " + std::to_string(clf.dim()));
  return clf.weight.leftCols(d) * y.head(d) + clf.bias.col(0);
}

std::size_t argmax(const Eigen::VectorXd& logits) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  return best;
}

std::size_t Probe::slot_count() const {
  return pooling::kPoolSlots.size() + 2 * classifiers.size();
}

Matrix* Probe::tensor(std::size_t slot) {
  return const_cast<Matrix*>(static_cast<const Probe*>(this)->tensor(slot));
}

const Matrix* Probe::tensor(std::size_t slot) const {
  if (slot < pooling::kPoolSlots.size()) {
    const auto& s = pooling::kPoolSlots[slot];
    const auto& m = pool.*(s.member);
    return s.learnable && m ? &*m : nullptr;
  }
  const std::size_t k = (slot - pooling::kPoolSlots.size()) / 2;
  if (k >= classifiers.size()) return nullptr;
  return slot == classifier_weight_slot(k) ? &classifiers[k].weight : &classifiers[k].bias;
}

std::string Probe::slot_name(std::size_t slot) const {
  if (slot < pooling::kPoolSlots.size()) return std::string(pooling::kPoolSlots[slot].name);
  const std::size_t k = (slot - pooling::kPoolSlots.size()) / 2;
  return "classifier." + std::to_string(k) + (slot == classifier_weight_slot(k) ? ".weight" : ".bias");
}

const Classifier& Probe::classifier_for(std::size_t dim) const {
  for (const auto& c : classifiers)
    if (static_cast<std::size_t>(c.dim()) == dim) return c;
  return classifiers.front();
}

void Probe::validate(std::uint32_t num_classes) const {
  pooling::validate_params(config, pool);
  if (classifiers.empty()) throw ValidationError("probe has no classifier");
  const auto f = static_cast<Eigen::Index>(config.feature_dim());
  if (classifiers.front().dim() != f)
    throw ValidationError("classifier width " + std::to_string(classifiers.front().dim()) +
                          " does not match feature dim " + std::to_string(f));
  for (const auto& c : classifiers) {
    if (c.classes() != num_classes || c.bias.rows() != num_classes || c.bias.cols() != 1)
      throw ValidationError("classifier shape does not match " + std::to_string(num_classes) + " classes");
    if (c.dim() > f) throw ValidationError("classifier wider than the pooled feature");
    if (!c.weight.allFinite() || !c.bias.allFinite()) throw ValidationError("classifier is not finite");
  }
}

}  // namespace probekit::training
