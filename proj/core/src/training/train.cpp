#include "probekit/training/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "probekit/common/error.hpp"
#include "probekit/common/parallel.hpp"
#include "probekit/common/rng.hpp"
#include "probekit/data/subset.hpp"
#include "probekit/training/optim.hpp"

namespace probekit::training {

namespace {

constexpr double kBnMomentum = 0.1;

std::vector<std::size_t> all_or(std::span<const std::size_t> indices, std::size_t n) {
  if (!indices.empty()) return {indices.begin(), indices.end()};
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

void update_running_stats(pooling::PoolParams& pool, const pooling::NormStats& batch, double count) {
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  *pool.bn_mean = (1.0 - kBnMomentum) * *pool.bn_mean + kBnMomentum * batch.mean;
  *pool.bn_var = (1.0 - kBnMomentum) * *pool.bn_var + (kBnMomentum * unbias) * batch.var;
}

}  // namespace

void HyperParams::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be > 0");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
  if (!(trust_coeff > 0.0)) throw ValidationError("LARS trust coefficient must be > 0");
}

nlohmann::ordered_json to_json(const HyperParams& h) {
  return {{"epochs", h.epochs},
          {"warmup_epochs", h.warmup_epochs},
          {"lr", h.lr},
          {"batch_size", h.batch_size},
          {"momentum", h.momentum},
          {"weight_decay", h.weight_decay},
          {"optimizer", h.optimizer == Optimizer::lars ? "lars" : "sgd_momentum"},
          {"trust_coeff", h.trust_coeff},
          {"seed", h.seed}};
}

HyperParams hyper_from_json(const nlohmann::json& j) {
  try {
    HyperParams h;
    h.epochs = j.at("epochs").get<std::uint32_t>();
    h.warmup_epochs = j.at("warmup_epochs").get<std::uint32_t>();
    h.lr = j.at("lr").get<double>();
    h.batch_size = j.at("batch_size").get<std::uint32_t>();
    h.momentum = j.at("momentum").get<double>();
    h.weight_decay = j.at("weight_decay").get<double>();
    const auto opt = j.at("optimizer").get<std::string>();
    if (opt == "lars") {
      h.optimizer = Optimizer::lars;
    } else if (opt == "sgd_momentum") {
      h.optimizer = Optimizer::sgd_momentum;
    } else {
      throw FormatError("unknown optimizer '" + opt + "'");
    }
    h.trust_coeff = j.value("trust_coeff", 0.001);
    h.seed = j.at("seed").get<std::uint64_t>();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("hyperparameter JSON: ") + e.what());
  }
}

double scheduled_lr(const HyperParams& hyper, std::size_t epoch) {
  const double e = static_cast<double>(epoch);
  if (epoch < hyper.warmup_epochs) return hyper.lr * (e + 1.0) / hyper.warmup_epochs;
  const double span = static_cast<double>(hyper.epochs) - hyper.warmup_epochs;
  if (span <= 0.0) return hyper.lr;
  const double progress = (e - hyper.warmup_epochs) / span;
  return hyper.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = r.train_loss;
  j["train_classification"] = r.train_classification;
  j["train_similarity"] = r.train_similarity;
  j["train_top1"] = r.train_top1;
  j["val_top1"] = r.val_top1;
  if (!r.val_top1_at_dim.empty()) {
    nlohmann::ordered_json dims = nlohmann::ordered_json::object();
    for (const auto& [d, acc] : r.val_top1_at_dim) dims[std::to_string(d)] = acc;
    j["val_top1_at_dim"] = dims;
  }
  return j;
}

Probe init_probe(const pooling::PoolConfig& config, const LossConfig& loss, std::uint32_t num_classes,
                 std::uint64_t seed) {
  config.validate();
  loss.validate(config.feature_dim());
  if (num_classes < 1) throw ValidationError("need at least one class");
  Probe p;
  p.config = config;
  p.pool = pooling::init_params(config, derive_seed(seed, "pool"));
  p.classifiers.push_back(
      init_classifier(num_classes, config.feature_dim(), derive_seed(seed, "classifier/0")));
  if (loss.mode == MatryoshkaMode::vanilla)
    for (std::size_t k = 1; k < loss.matryoshka.size(); ++k)
      p.classifiers.push_back(init_classifier(num_classes, loss.matryoshka[k].dim,
                                              derive_seed(seed, "classifier/" + std::to_string(k))));
  return p;
}

std::vector<pooling::ForwardResult> forward_all(const Probe& probe, std::span<const data::Sample> samples,
                                                std::span<const std::size_t> indices,
                                                const pooling::ForwardOptions& options) {
  const auto idx = all_or(indices, samples.size());
  std::vector<pooling::ForwardResult> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t i) {
    const auto& s = samples[idx[i]];
    out[i] = pooling::forward(probe.config, probe.pool, s.x, s.cls ? &*s.cls : nullptr, options);
  });
  return out;
}

double top1(const Probe& probe, std::span<const pooling::ForwardResult> outputs,
            std::span<const std::uint32_t> labels, std::optional<std::size_t> prefix_dim) {
  if (outputs.empty()) throw ValidationError("cannot evaluate an empty set");
  if (outputs.size() != labels.size()) throw ValidationError("outputs and labels differ in length");
  const std::size_t dim = prefix_dim.value_or(probe.config.feature_dim());
  if (dim < 1 || dim > probe.config.feature_dim())
    throw ValidationError("prefix dim " + std::to_string(dim) + " outside [1, " +
                          std::to_string(probe.config.feature_dim()) + "]");
  const Classifier& clf = probe.classifier_for(dim);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    if (argmax(classify(clf, outputs[i].feature.y, dim)) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(outputs.size());
}

double evaluate(const Probe& probe, std::span<const data::Sample> samples,
                std::span<const std::uint32_t> labels, std::span<const std::size_t> indices,
                std::optional<std::size_t> prefix_dim, const pooling::ForwardOptions& options) {
  const auto idx = all_or(indices, samples.size());
  std::vector<std::uint32_t> picked;
  picked.reserve(idx.size());
  for (auto i : idx) picked.push_back(labels[i]);
  const auto outputs = forward_all(probe, samples, idx, options);
  return top1(probe, outputs, picked, prefix_dim);
}

void check_compatible(const ProbeCheckpoint& checkpoint, const data::FeatureSet& set) {
  if (set.channels != checkpoint.probe.config.in_dim)
    throw ValidationError("feature set has " + std::to_string(set.channels) +
                          " channels, checkpoint expects " + std::to_string(checkpoint.probe.config.in_dim));
  if (set.num_classes != checkpoint.num_classes)
    throw ValidationError("feature set has " + std::to_string(set.num_classes) +
                          " classes, checkpoint expects " + std::to_string(checkpoint.num_classes));
  if (checkpoint.probe.config.method == pooling::Method::cls && !set.cls_tokens)
    throw ValidationError("CLS probe needs cls tokens, feature set has none");
}

double evaluate(const ProbeCheckpoint& checkpoint, const data::FeatureSet& set,
                std::optional<std::size_t> prefix_dim, std::span<const std::size_t> indices) {
  check_compatible(checkpoint, set);
  const auto samples = data::materialize(set);
  return evaluate(checkpoint.probe, samples, set.labels, indices, prefix_dim);
}

TrainResult train(const pooling::PoolConfig& config, const LossConfig& loss, const HyperParams& hyper,
                  const data::FeatureSet& train_set, const data::FeatureSet& val_set,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const EpochCallback& on_epoch) {
  hyper.validate();
  train_set.validate();
  val_set.validate();
  if (train_set.channels != config.in_dim || val_set.channels != config.in_dim)
    throw ValidationError("feature channels do not match D_i = " + std::to_string(config.in_dim));
  if (train_set.num_classes != val_set.num_classes)
    throw ValidationError("train and validation sets disagree on the class count");
  if (config.method == pooling::Method::cls && (!train_set.cls_tokens || !val_set.cls_tokens))
    throw ValidationError("CLS probing needs cls tokens in both sets");

  TrainResult result;
  ProbeCheckpoint& ck = result.checkpoint;
  ck.num_classes = train_set.num_classes;
  ck.loss = loss;
  ck.hyper = hyper;
  ck.probe = init_probe(config, loss, train_set.num_classes, hyper.seed);
  Probe& probe = ck.probe;

  const auto train_samples = data::materialize(train_set);
  const auto val_samples = data::materialize(val_set);
  const auto train_idx = all_or(train_indices, train_samples.size());
  const auto val_idx = all_or(val_indices, val_samples.size());
  std::vector<std::uint32_t> val_labels;
  for (auto i : val_idx) val_labels.push_back(val_set.labels.at(i));

  OptimizerState state;
  const std::uint64_t shuffle_seed = derive_seed(hyper.seed, "shuffle");
  const bool batchnorm = config.input_norm == pooling::InputNorm::batchnorm;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = scheduled_lr(hyper, epoch);
    const auto batches = data::epoch_batches(train_idx, hyper.batch_size, shuffle_seed, epoch);
    std::size_t seen = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const data::Sample*> samples;
      std::vector<std::uint32_t> labels;
      for (auto i : batches[b]) {
        samples.push_back(&train_samples[i]);
        labels.push_back(train_set.labels[i]);
      }
      pooling::ForwardOptions options;
      pooling::NormStats stats;
      double token_count = 0.0;
      if (batchnorm) {
        std::vector<const Matrix*> xs;
        for (const auto* s : samples) {
          xs.push_back(&s->x);
          token_count += static_cast<double>(s->x.cols());
        }
        stats = pooling::batch_norm_stats(xs);
        options.batch_stats = &stats;
      }

      GradientResult g;
      try {
        g = backward(probe, {samples, labels}, loss, options);
      } catch (const NumericError& e) {
        throw NumericError("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           ": " + e.what());
      }
      for (std::size_t slot = 0; slot < g.grads.slots.size(); ++slot)
        if (!g.grads.slots[slot].allFinite())
          throw NumericError("non-finite gradient for " + probe.slot_name(slot) + " at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(b));

      if (hyper.optimizer == Optimizer::lars) {
        lars_step(probe, g.grads, state, rec.lr, hyper.momentum, hyper.weight_decay, hyper.trust_coeff);
      } else {
        sgd_momentum_step(probe, g.grads, state, rec.lr, hyper.momentum, hyper.weight_decay);
      }
      if (batchnorm) update_running_stats(probe.pool, stats, token_count);

      const double n = static_cast<double>(samples.size());
      rec.train_loss += g.loss.total * n;
      rec.train_classification += g.loss.classification * n;
      rec.train_similarity += g.loss.similarity * n;
      correct += g.loss.correct;
      seen += samples.size();
    }
    rec.train_loss /= static_cast<double>(seen);
    rec.train_classification /= static_cast<double>(seen);
    rec.train_similarity /= static_cast<double>(seen);
    rec.train_top1 = static_cast<double>(correct) / static_cast<double>(seen);

    const auto outputs = forward_all(probe, val_samples, val_idx);
    rec.val_top1 = top1(probe, outputs, val_labels);
    for (const auto& term : loss.matryoshka)
      rec.val_top1_at_dim.emplace_back(term.dim, top1(probe, outputs, val_labels, term.dim));

    if (on_epoch) on_epoch(rec);
    result.report.push_back(std::move(rec));
  }

  ck.metadata.epochs_run = hyper.epochs;
  ck.metadata.final_train_loss = result.report.back().train_loss;
  ck.metadata.final_val_top1 = result.report.back().val_top1;
  ck.metadata.seed = hyper.seed;
  return result;
}

}  // namespace probekit::training
