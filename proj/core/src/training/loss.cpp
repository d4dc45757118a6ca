#include "probekit/training/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "probekit/autodiff/tape.hpp"
#include "probekit/common/error.hpp"
#include "probekit/common/parallel.hpp"

namespace probekit::training {

using autodiff::Tape;
using autodiff::Var;

void LossConfig::validate(std::uint32_t feature_dim) const {
  if (!(attn_sim_weight >= 0.0) || !std::isfinite(attn_sim_weight))
    throw ValidationError("attention-similarity weight must be finite and >= 0");
  for (std::size_t k = 0; k < matryoshka.size(); ++k) {
    const auto& t = matryoshka[k];
    if (t.dim < 1 || t.dim > feature_dim || feature_dim % t.dim != 0)
      throw ValidationError("matryoshka dim " + std::to_string(t.dim) + " must divide the feature dim " +
                            std::to_string(feature_dim));
    if (k > 0 && t.dim >= matryoshka[k - 1].dim)
      throw ValidationError("matryoshka dims must be strictly decreasing (nested prefixes)");
    if (!(t.weight >= 0.0) || !std::isfinite(t.weight))
      throw ValidationError("matryoshka weights must be finite and >= 0");
  }
  if (mode == MatryoshkaMode::vanilla && !matryoshka.empty() && matryoshka.front().dim != feature_dim)
    throw ValidationError("vanilla matryoshka must start at the full feature dim");
}

nlohmann::ordered_json to_json(const LossConfig& cfg) {
  nlohmann::ordered_json terms = nlohmann::ordered_json::array();
  for (const auto& t : cfg.matryoshka) terms.push_back({{"dim", t.dim}, {"weight", t.weight}});
  return {{"matryoshka", terms},
          {"mode", cfg.mode == MatryoshkaMode::efficient ? "efficient" : "vanilla"},
          {"attn_sim_weight", cfg.attn_sim_weight}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  try {
    LossConfig cfg;
    for (const auto& t : j.at("matryoshka"))
      cfg.matryoshka.push_back({t.at("dim").get<std::uint32_t>(), t.at("weight").get<double>()});
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "efficient") {
      cfg.mode = MatryoshkaMode::efficient;
    } else if (mode == "vanilla") {
      cfg.mode = MatryoshkaMode::vanilla;
    } else {
      throw FormatError("unknown matryoshka mode '" + mode + "'");
    }
    cfg.attn_sim_weight = j.at("attn_sim_weight").get<double>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("loss config JSON: ") + e.what());
  }
}

double cross_entropy(const Eigen::VectorXd& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size()))
    throw ValidationError("label " + std::to_string(label) + " out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(static_cast<Eigen::Index>(label));
}

double matryoshka_loss(std::span<const Classifier> classifiers, const Eigen::VectorXd& y,
                       std::size_t label, const LossConfig& cfg) {
  cfg.validate(static_cast<std::uint32_t>(y.size()));
  if (cfg.mode == MatryoshkaMode::vanilla && classifiers.size() != cfg.matryoshka.size())
    throw ValidationError("vanilla matryoshka needs one classifier per dim");
  if (classifiers.empty()) throw ValidationError("matryoshka loss needs a classifier");
  double total = 0.0;
  for (std::size_t k = 0; k < cfg.matryoshka.size(); ++k) {
    const auto& t = cfg.matryoshka[k];
    const Classifier& clf = cfg.mode == MatryoshkaMode::efficient ? classifiers.front() : classifiers[k];
    total += t.weight * cross_entropy(classify(clf, y, t.dim), label);
  }
  return total;
}

double attention_similarity_loss(const Matrix& attention) {
  Tape tape(false);
  return tape.scalar(tape.mean_pairwise_row_cosine(tape.constant(attention)));
}

namespace {

struct SampleLoss {
  Var total;
  Var classification;
  Var similarity;
  Var feature;
};

SampleLoss sample_graph(Tape& t, const Probe& probe, const data::Sample& sample, std::uint32_t label,
                        const LossConfig& cfg, const pooling::ForwardOptions& options) {
  const auto pool_vars = pooling::bind_params(t, probe.pool);
  std::vector<std::pair<Var, Var>> clf_vars;
  clf_vars.reserve(probe.classifiers.size());
  for (std::size_t k = 0; k < probe.classifiers.size(); ++k)
    clf_vars.emplace_back(t.parameter(probe.classifiers[k].weight, classifier_weight_slot(k)),
                          t.parameter(probe.classifiers[k].bias, classifier_bias_slot(k)));

  const auto g = pooling::build_forward(t, probe.config, pool_vars, sample.x,
                                        sample.cls ? &*sample.cls : nullptr, options);
  const Eigen::Index full = t.value(g.feature).rows();

  auto head_loss = [&](std::size_t k, Eigen::Index dim) {
    const auto [w, b] = clf_vars[k];
    const Eigen::Index width = probe.classifiers[k].dim();
    const Var wd = dim == width ? w : t.cols(w, 0, dim);
    const Var yd = dim == full ? g.feature : t.rows(g.feature, 0, dim);
    return t.cross_entropy(t.add(t.matmul(wd, yd), b), label);
  };

  SampleLoss out;
  out.feature = g.feature;
  if (cfg.matryoshka.empty()) {
    out.classification = head_loss(0, full);
  } else {
    for (std::size_t k = 0; k < cfg.matryoshka.size(); ++k) {
      const auto& term = cfg.matryoshka[k];
      const std::size_t clf = cfg.mode == MatryoshkaMode::efficient ? 0 : k;
      const Var l = t.scale(head_loss(clf, term.dim), term.weight);
      out.classification = k == 0 ? l : t.add(out.classification, l);
    }
  }
  out.total = out.classification;
  if (cfg.attn_sim_weight > 0.0 && g.predictor_attention.valid()) {
    out.similarity = t.mean_pairwise_row_cosine(g.predictor_attention);
    out.total = t.add(out.total, t.scale(out.similarity, cfg.attn_sim_weight));
  }
  return out;
}

void check_batch(const Probe& probe, const BatchView& batch, const LossConfig& cfg) {
  if (batch.samples.empty()) throw ValidationError("empty batch");
  if (batch.samples.size() != batch.labels.size())
    throw ValidationError("batch has mismatched sample and label counts");
  cfg.validate(probe.config.feature_dim());
  if (cfg.mode == MatryoshkaMode::vanilla && !cfg.matryoshka.empty() &&
      probe.classifiers.size() != cfg.matryoshka.size())
    throw ValidationError("vanilla matryoshka needs one classifier per dim");
  const auto classes = static_cast<std::uint32_t>(probe.classifiers.front().classes());
  for (auto l : batch.labels)
    if (l >= classes) throw ValidationError("label " + std::to_string(l) + " out of range");
}

struct SampleResult {
  LossValue loss;
  std::vector<Matrix> grads;
};

SampleResult run_sample(const Probe& probe, const data::Sample& sample, std::uint32_t label,
                        const LossConfig& cfg, const pooling::ForwardOptions& options, bool record,
                        std::size_t index) {
  Tape t(record);
  const SampleLoss s = sample_graph(t, probe, sample, label, cfg, options);
  SampleResult r;
  r.loss.total = t.scalar(s.total);
  r.loss.classification = t.scalar(s.classification);
  r.loss.similarity = s.similarity.valid() ? t.scalar(s.similarity) : 0.0;
  if (!std::isfinite(r.loss.total))
    throw NumericError("non-finite loss at batch sample " + std::to_string(index));
  const Eigen::VectorXd y = t.value(s.feature).col(0);
  r.loss.correct = argmax(classify(probe.classifiers.front(), y)) == label ? 1 : 0;
  if (record) {
    t.backward(s.total);
    r.grads.resize(probe.slot_count());
    for (std::size_t slot = 0; slot < r.grads.size(); ++slot) {
      const Matrix* p = probe.tensor(slot);
      if (p == nullptr) continue;
      auto g = t.slot_grad(slot);
      r.grads[slot] = g ? std::move(*g) : Matrix::Zero(p->rows(), p->cols());
    }
  }
  return r;
}

constexpr std::size_t kChunk = 16;

GradientResult accumulate(const Probe& probe, const BatchView& batch, const LossConfig& cfg,
                          const pooling::ForwardOptions& options, bool record) {
  check_batch(probe, batch, cfg);
  GradientResult out;
  if (record) {
    out.grads.slots.resize(probe.slot_count());
    for (std::size_t slot = 0; slot < out.grads.slots.size(); ++slot)
      if (const Matrix* p = probe.tensor(slot)) out.grads.slots[slot] = Matrix::Zero(p->rows(), p->cols());
  }
  const std::size_t n = batch.samples.size();
  std::vector<SampleResult> results;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t count = std::min(kChunk, n - start);
    results.assign(count, {});
    parallel_for(count, [&](std::size_t i) {
      results[i] = run_sample(probe, *batch.samples[start + i], batch.labels[start + i], cfg, options,
                              record, start + i);
    });
    for (auto& r : results) {
      out.loss.total += r.loss.total;
      out.loss.classification += r.loss.classification;
      out.loss.similarity += r.loss.similarity;
      out.loss.correct += r.loss.correct;
      if (record)
        for (std::size_t slot = 0; slot < r.grads.size(); ++slot)
          if (r.grads[slot].size() != 0) out.grads.slots[slot] += r.grads[slot];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss.total *= inv;
  out.loss.classification *= inv;
  out.loss.similarity *= inv;
  if (record)
    for (auto& g : out.grads.slots) g *= inv;
  return out;
}

}  // namespace

LossValue batch_loss(const Probe& probe, const BatchView& batch, const LossConfig& cfg,
                     const pooling::ForwardOptions& options) {
  return accumulate(probe, batch, cfg, options, false).loss;
}

GradientResult backward(const Probe& probe, const BatchView& batch, const LossConfig& cfg,
                        const pooling::ForwardOptions& options) {
  return accumulate(probe, batch, cfg, options, true);
}

Gradients finite_diff_grad(const Probe& probe, const BatchView& batch, const LossConfig& cfg, double h,
                           const pooling::ForwardOptions& options) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be > 0");
  Gradients out;
  out.slots.resize(probe.slot_count());
  Probe work = probe;
  for (std::size_t slot = 0; slot < out.slots.size(); ++slot) {
    Matrix* p = work.tensor(slot);
    if (p == nullptr) continue;
    Matrix g(p->rows(), p->cols());
    for (Eigen::Index i = 0; i < p->size(); ++i) {
      const double saved = p->data()[i];
      p->data()[i] = saved + h;
      const double up = batch_loss(work, batch, cfg, options).total;
      p->data()[i] = saved - h;
      const double down = batch_loss(work, batch, cfg, options).total;
      p->data()[i] = saved;
      g.data()[i] = (up - down) / (2.0 * h);
    }
    out.slots[slot] = std::move(g);
  }
  return out;
}

}  // namespace probekit::training
