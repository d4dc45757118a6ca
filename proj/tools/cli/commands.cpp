#include "commands.hpp"

#include <cmath>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>

#include "options.hpp"
#include "probekit/analysis/metrics.hpp"
#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"
#include "probekit/cost/cost_model.hpp"
#include "probekit/data/fprobe.hpp"
#include "probekit/data/subset.hpp"
#include "probekit/data/synthetic.hpp"
#include "probekit/training/checkpoint.hpp"

namespace probekit::cli {

namespace {

std::string line(const Json& j) { return j.dump() + "\n"; }

std::vector<std::size_t> all_or(const std::vector<std::size_t>& indices, std::size_t count) {
  if (!indices.empty()) return indices;
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  data::SynthSpec spec;
  std::uint32_t grid_w = 0;
  std::uint32_t grid_h = 0;
  std::string out;
  double val_fraction = 0.0;
  std::string manifest;
};

void run_synth(const SynthArgs& a) {
  data::SynthSpec spec = a.spec;
  if (a.grid_w == 0 && a.grid_h == 0) {
    const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(static_cast<double>(spec.tokens))));
    spec.grid_w = side * side == spec.tokens ? side : spec.tokens;
    spec.grid_h = side * side == spec.tokens ? side : 1;
  } else {
    spec.grid_w = a.grid_w;
    spec.grid_h = a.grid_h;
  }
  const auto set = data::generate_synthetic(spec);
  data::write_fprobe(set, a.out);

  if (a.manifest.empty()) {
    if (a.val_fraction > 0.0) throw ValidationError("--val-fraction needs --manifest");
    return;
  }
  if (!(a.val_fraction > 0.0 && a.val_fraction < 1.0)) throw ValidationError("--val-fraction must lie in (0, 1)");
  data::SplitManifest m;
  const auto rel = std::filesystem::relative(std::filesystem::absolute(a.out),
                                             std::filesystem::absolute(a.manifest).parent_path());
  m.train_file = m.val_file = rel.generic_string();
  const auto val = data::stratified_subset(set, a.val_fraction, derive_seed(spec.seed, "split"));
  std::vector<std::size_t> train;
  std::size_t next = 0;
  for (std::size_t s = 0; s < set.samples; ++s) {
    if (next < val.size() && val[next] == s) {
      ++next;
    } else {
      train.push_back(s);
    }
  }
  m.train_indices = std::move(train);
  m.val_indices = val;
  data::write_manifest(m, a.manifest);
}

void add_synth(CLI::App& app, std::function<void()>& action) {
  auto a = std::make_shared<SynthArgs>();
  auto* cmd = app.add_subcommand("synth", "Write a planted-foreground synthetic feature file");
  cmd->add_option("--classes", a->spec.classes)->capture_default_str();
  cmd->add_option("--samples-per-class", a->spec.samples_per_class)->capture_default_str();
  cmd->add_option("--tokens", a->spec.tokens)->capture_default_str();
  cmd->add_option("--dim", a->spec.channels, "channels per token")->capture_default_str();
  cmd->add_option("--fg", a->spec.fg_tokens_per_sample, "foreground tokens per sample")->capture_default_str();
  cmd->add_option("--fg-scale", a->spec.fg_mean_scale)->capture_default_str();
  cmd->add_option("--noise", a->spec.noise_std)->capture_default_str();
  cmd->add_option("--grid-w", a->grid_w, "defaults to sqrt(tokens) for square counts");
  cmd->add_option("--grid-h", a->grid_h);
  cmd->add_option("--seed", a->spec.seed)->capture_default_str();
  cmd->add_option("--out", a->out)->required();
  cmd->add_option("--val-fraction", a->val_fraction, "stratified validation share written to --manifest");
  cmd->add_option("--manifest", a->manifest);
  cmd->callback([&action, a] { action = [a] { run_synth(*a); }; });
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string features, val_features, manifest, replay, config_file;
  std::string checkpoint, report;
  std::string method = "ep";
  std::uint32_t queries = 1;
  std::string out_dim = "full";
  std::string attn_dim;
  std::string matryoshka;
  std::string matryoshka_mode = "efficient";
  double attn_sim = 0.0;
  training::HyperParams hyper;
  std::string optimizer = "sgd";
  bool verbose = false;
};

void run_train(const TrainArgs& a, const CLI::App& cmd) {
  auto given = [&cmd](const char* flag) { return cmd.count(flag) > 0; };
  std::string features = a.features;
  std::string val_features = a.val_features;
  std::string manifest = a.manifest;
  std::string checkpoint_path = a.checkpoint;
  std::string report_path = a.report;

  Json replayed;
  if (!a.replay.empty()) {
    replayed = read_run(a.replay);
    const auto& p = replayed.at("paths");
    if (!given("--features")) features = p.value("features", "");
    if (!given("--val-features")) val_features = p.value("val_features", "");
    if (!given("--manifest")) manifest = p.value("manifest", "");
    if (!given("--checkpoint")) checkpoint_path = p.value("checkpoint", "");
    if (!given("--report")) report_path = p.value("report", "");
  }
  if (checkpoint_path.empty()) throw ValidationError("--checkpoint is required");

  const Inputs in = load_inputs(features, val_features, manifest);
  const std::uint32_t in_dim = in.train.channels;

  pooling::PoolConfig config;
  training::LossConfig loss;
  training::HyperParams hyper = a.hyper;
  if (!replayed.is_null()) {
    config = pooling::config_from_json(replayed.at("pool_config"));
    loss = training::loss_config_from_json(replayed.at("loss"));
    hyper = training::hyper_from_json(replayed.at("hyper"));
  } else {
    if (!a.config_file.empty()) {
      const auto bytes = data::read_file(a.config_file);
      try {
        config = pooling::config_from_json(
            nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(a.config_file + ": " + e.what());
      }
    } else {
      const auto method = pooling::method_from_string(a.method);
      std::optional<std::uint32_t> attn;
      if (!a.attn_dim.empty()) attn = parse_dim(a.attn_dim, in_dim);
      std::optional<std::uint32_t> out;
      if (given("--out-dim") || method != pooling::Method::coca) out = parse_dim(a.out_dim, in_dim);
      config = pooling::make_config(method, in_dim, a.queries, out, attn);
    }
    if (!a.matryoshka.empty()) loss.matryoshka = parse_matryoshka(a.matryoshka, in_dim);
    loss.mode = matryoshka_mode_from_string(a.matryoshka_mode);
    loss.attn_sim_weight = a.attn_sim;
    hyper.optimizer = optimizer_from_string(a.optimizer);
  }
  config.validate();
  loss.validate(config.feature_dim());
  hyper.validate();

  Json run;
  run["subcommand"] = "train";
  run["paths"] = {{"features", features},
                  {"val_features", val_features},
                  {"manifest", manifest},
                  {"checkpoint", checkpoint_path},
                  {"report", report_path}};
  run["pool_config"] = pooling::to_json(config);
  run["loss"] = training::to_json(loss);
  run["hyper"] = training::to_json(hyper);
  run["seed"] = hyper.seed;

  training::EpochCallback progress;
  if (a.verbose) {
    progress = [](const training::EpochRecord& r) {
      std::cerr << "epoch " << r.epoch << " loss " << r.train_loss << " val_top1 " << r.val_top1 << "\n";
    };
  }
  auto result = training::train(config, loss, hyper, in.train, in.val, in.train_indices, in.val_indices, progress);
  result.checkpoint.run = run;
  training::save_checkpoint(result.checkpoint, checkpoint_path);

  if (!report_path.empty()) {
    std::string text;
    for (const auto& r : result.report) {
      Json j = training::to_json(r);
      j["run"] = run;
      text += line(j);
    }
    data::write_file_atomic(report_path, text);
  }
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << "val_top1 " << result.checkpoint.metadata.final_val_top1 << "\n";
  std::cout << out.str();
}

void add_train(CLI::App& app, std::function<void()>& action) {
  auto a = std::make_shared<TrainArgs>();
  auto* cmd = app.add_subcommand("train", "Train an attentive probe on frozen features");
  cmd->add_option("--features", a->features, "training FPROBE file");
  cmd->add_option("--val-features", a->val_features, "validation FPROBE file (defaults to --features)");
  cmd->add_option("--manifest", a->manifest, "split manifest instead of --features");
  cmd->add_option("--replay", a->replay, "rerun the configuration embedded in a report or checkpoint");
  cmd->add_option("--config", a->config_file, "pool configuration JSON, overrides --method and dims");
  cmd->add_option("--method", a->method)->capture_default_str();
  cmd->add_option("--queries,--heads", a->queries, "attention predictors M")->capture_default_str();
  cmd->add_option("--out-dim", a->out_dim, "full|half|quarter|eighth|<n>")->capture_default_str();
  cmd->add_option("--attn-dim", a->attn_dim, "full|half|quarter|eighth|<n>");
  cmd->add_option("--matryoshka", a->matryoshka, "weight:dim,... e.g. 1.0:full,1.0:half");
  cmd->add_option("--matryoshka-mode", a->matryoshka_mode, "efficient|vanilla")->capture_default_str();
  cmd->add_option("--attn-sim", a->attn_sim, "attention-similarity loss weight")->capture_default_str();
  cmd->add_option("--epochs", a->hyper.epochs)->capture_default_str();
  cmd->add_option("--warmup", a->hyper.warmup_epochs)->capture_default_str();
  cmd->add_option("--lr", a->hyper.lr)->capture_default_str();
  cmd->add_option("--batch", a->hyper.batch_size)->capture_default_str();
  cmd->add_option("--momentum", a->hyper.momentum)->capture_default_str();
  cmd->add_option("--wd", a->hyper.weight_decay)->capture_default_str();
  cmd->add_option("--optimizer", a->optimizer, "sgd|lars")->capture_default_str();
  cmd->add_option("--trust", a->hyper.trust_coeff, "LARS trust coefficient")->capture_default_str();
  cmd->add_option("--seed", a->hyper.seed)->capture_default_str();
  cmd->add_option("--checkpoint", a->checkpoint, "output checkpoint path");
  cmd->add_option("--report", a->report, "output JSON-lines epoch report");
  cmd->add_flag("--verbose", a->verbose, "per-epoch progress on stderr");
  cmd->callback([&action, a, cmd] { action = [a, cmd] { run_train(*a, *cmd); }; });
}

// ---- shared evaluation inputs ---------------------------------------------

struct EvalInputs {
  std::string checkpoint, features, manifest, out;
};

void add_eval_inputs(CLI::App* cmd, EvalInputs& e) {
  cmd->add_option("--checkpoint", e.checkpoint)->required();
  cmd->add_option("--features", e.features, "FPROBE file to evaluate");
  cmd->add_option("--manifest", e.manifest, "evaluate the manifest's validation split instead");
  cmd->add_option("--out", e.out, "output path (stdout when omitted)");
}

struct Loaded {
  training::ProbeCheckpoint checkpoint;
  data::FeatureSet set;
  std::vector<std::size_t> indices;
};

Loaded load_eval(const EvalInputs& e) {
  Loaded l;
  l.checkpoint = training::load_checkpoint(e.checkpoint);
  if (e.manifest.empty()) {
    if (e.features.empty()) throw ValidationError("--features or --manifest is required");
    l.set = data::read_fprobe(e.features);
  } else {
    Inputs in = load_inputs("", "", e.manifest);
    l.set = std::move(in.val);
    l.indices = std::move(in.val_indices);
  }
  training::check_compatible(l.checkpoint, l.set);
  return l;
}

Json eval_run(const char* name, const EvalInputs& e, const Loaded& l) {
  Json run;
  run["subcommand"] = name;
  run["paths"] = {{"checkpoint", e.checkpoint}, {"features", e.features}, {"manifest", e.manifest}, {"out", e.out}};
  run["seed"] = l.checkpoint.hyper.seed;
  return run;
}

// ---- eval -----------------------------------------------------------------

void add_eval(CLI::App& app, std::function<void()>& action) {
  auto e = std::make_shared<EvalInputs>();
  auto prefix = std::make_shared<std::string>();
  auto* cmd = app.add_subcommand("eval", "Top-1 accuracy of a trained probe");
  add_eval_inputs(cmd, *e);
  cmd->add_option("--prefix-dim", *prefix, "truncate the pooled feature: full|half|quarter|eighth|<n>");
  cmd->callback([&action, e, prefix] {
    action = [e, prefix] {
      const auto l = load_eval(*e);
      std::optional<std::size_t> dim;
      if (!prefix->empty()) dim = parse_dim(*prefix, l.checkpoint.probe.config.in_dim);
      Json out;
      out["metric"] = "top1";
      out["value"] = training::evaluate(l.checkpoint, l.set, dim, l.indices);
      out["prefix_dim"] = dim ? Json(*dim) : Json(l.checkpoint.probe.config.feature_dim());
      out["samples"] = l.indices.empty() ? l.set.samples : l.indices.size();
      Json run = eval_run("eval", *e, l);
      run["prefix_dim"] = *prefix;
      out["run"] = run;
      emit(e->out, line(out));
    };
  });
}

// ---- analyze --------------------------------------------------------------

struct AnalyzeArgs {
  EvalInputs in;
  std::string metrics = "entropy,bbox,complementarity,delta";
  std::string mode = "avg";
  std::string train_features;
  std::size_t knn_k = analysis::kDefaultKnnK;
  std::string recall_k = "1,2,4,8";
  std::string dump_attention;
};

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  for (const auto& item : split(text, ',')) ks.push_back(parse_dim(item, 0));
  return ks;
}

void run_analyze(const AnalyzeArgs& a) {
  const auto l = load_eval(a.in);
  const auto& probe = l.checkpoint.probe;
  const auto samples = data::materialize(l.set);
  const auto indices = all_or(l.indices, l.set.samples);
  const auto outputs = training::forward_all(probe, samples, indices);
  const auto wanted = split(a.metrics, ',');
  auto wants = [&](const char* m) { return std::ranges::find(wanted, m) != wanted.end(); };
  for (const auto& m : wanted) {
    static const char* known[] = {"entropy", "bbox", "complementarity", "delta", "knn", "recall"};
    if (std::ranges::find(known, m) == std::end(known)) throw ValidationError("unknown metric '" + m + "'");
  }

  const Json run = [&] {
    Json r = eval_run("analyze", a.in, l);
    r["metrics"] = a.metrics;
    r["mode"] = a.mode;
    r["train_features"] = a.train_features;
    r["knn_k"] = a.knn_k;
    r["recall_k"] = a.recall_k;
    return r;
  }();
  const std::string dataset = a.in.manifest.empty() ? a.in.features : a.in.manifest;
  auto report = [&](const char* metric) {
    Json j;
    j["metric"] = metric;
    j["dataset"] = dataset;
    j["checkpoint"] = a.in.checkpoint;
    return j;
  };

  const bool needs_maps = wants("entropy") || wants("bbox") || wants("complementarity") || wants("delta");
  if (needs_maps && !probe.config.uses_attention()) {
    throw ValidationError(std::string(pooling::to_string(probe.config.method)) + " has no attention maps to analyze");
  }
  const auto predictors = static_cast<std::size_t>(probe.config.heads);
  std::string text;
  std::vector<double> bbox_per, delta_per;

  if (wants("entropy")) {
    std::vector<double> per(predictors, 0.0);
    for (const auto& o : outputs)
      for (std::size_t j = 0; j < predictors; ++j)
        per[j] += analysis::attention_entropy(o.predictor_attention.row(static_cast<Eigen::Index>(j)).transpose());
    for (auto& v : per) v /= static_cast<double>(outputs.size());
    Json j = report("entropy");
    j["per_predictor"] = per;
    j["aggregate"] = std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(predictors);
    j["run"] = run;
    text += line(j);
  }
  if (wants("bbox")) {
    if (!l.set.bboxes || l.set.grid_w == 0) throw ValidationError("bbox needs a feature file with boxes and a grid");
    std::vector<double> per(predictors, 0.0);
    std::size_t counted = 0;
    for (std::size_t s = 0; s < indices.size(); ++s) {
      const auto& boxes = (*l.set.bboxes)[indices[s]];
      if (boxes.empty()) continue;
      ++counted;
      for (std::size_t j = 0; j < predictors; ++j) {
        per[j] += analysis::bbox_mass(outputs[s].predictor_attention.row(static_cast<Eigen::Index>(j)).transpose(),
                                      l.set.grid_w, l.set.grid_h, boxes);
      }
    }
    if (counted == 0) throw ValidationError("bbox: no sample carries a bounding box");
    for (auto& v : per) v /= static_cast<double>(counted);
    bbox_per = per;
    Json j = report("bbox");
    j["per_predictor"] = per;
    j["aggregate"] = std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(predictors);
    j["samples"] = counted;
    j["run"] = run;
    text += line(j);
  }
  if (wants("complementarity")) {
    const auto mode =
        a.mode == "max" ? analysis::ComplementarityMode::max
                        : (a.mode == "avg" ? analysis::ComplementarityMode::avg
                                           : throw ValidationError("--mode must be avg or max"));
    if (predictors < 2) throw ValidationError("complementarity needs at least 2 predictors");
    double sum = 0.0;
    for (const auto& o : outputs) sum += analysis::complementarity(o.predictor_attention, mode);
    Json j = report("complementarity");
    j["mode"] = a.mode;
    j["aggregate"] = sum / static_cast<double>(outputs.size());
    j["run"] = run;
    text += line(j);
  }
  if (wants("delta")) {
    std::vector<double> per;
    for (std::size_t j = 0; j < predictors; ++j) {
      per.push_back(analysis::uniform_replacement_delta(probe, samples, l.set.labels, static_cast<std::uint32_t>(j),
                                                        indices));
    }
    delta_per = per;
    Json j = report("delta");
    j["per_predictor"] = per;
    j["aggregate"] = std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(predictors);
    j["run"] = run;
    text += line(j);
  }
  if (!bbox_per.empty() && !delta_per.empty() && predictors >= 2) {
    Json j = report("bbox_delta_spearman");
    j["aggregate"] = analysis::spearman(bbox_per, delta_per);
    j["run"] = run;
    text += line(j);
  }
  if (wants("knn") || wants("recall")) {
    Eigen::MatrixXd query(probe.config.feature_dim(), static_cast<Eigen::Index>(outputs.size()));
    std::vector<std::uint32_t> labels;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
      query.col(static_cast<Eigen::Index>(s)) = outputs[s].feature.y;
      labels.push_back(l.set.labels[indices[s]]);
    }
    if (wants("knn")) {
      if (a.train_features.empty()) throw ValidationError("knn needs --train-features");
      const auto train_set = data::read_fprobe(a.train_features);
      const auto train = pooled_features(&l.checkpoint, train_set, false);
      Json j = report("knn");
      j["k"] = a.knn_k;
      j["aggregate"] = analysis::knn_eval(train, train_set.labels, query, labels, a.knn_k);
      j["run"] = run;
      text += line(j);
    }
    if (wants("recall")) {
      const auto ks = parse_ks(a.recall_k);
      Json j = report("recall");
      j["k"] = ks;
      j["per_k"] = analysis::recall_at_k(query, labels, ks);
      j["run"] = run;
      text += line(j);
    }
  }
  emit(a.in.out, text);

  if (!a.dump_attention.empty()) {
    std::string dump;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
      Json j;
      j["sample"] = indices[s];
      j["label"] = l.set.labels[indices[s]];
      Json rows = Json::array();
      const auto& att = outputs[s].predictor_attention;
      for (Eigen::Index r = 0; r < att.rows(); ++r) {
        std::vector<double> row(att.cols());
        for (Eigen::Index c = 0; c < att.cols(); ++c) row[static_cast<std::size_t>(c)] = att(r, c);
        rows.push_back(row);
      }
      j["attention"] = rows;
      dump += line(j);
    }
    data::write_file_atomic(a.dump_attention, dump);
  }
}

void add_analyze(CLI::App& app, std::function<void()>& action) {
  auto a = std::make_shared<AnalyzeArgs>();
  auto* cmd = app.add_subcommand("analyze", "Attention and representation metrics of a trained probe (JSON-lines)");
  add_eval_inputs(cmd, a->in);
  cmd->add_option("--metrics", a->metrics, "entropy,bbox,complementarity,delta,knn,recall")->capture_default_str();
  cmd->add_option("--mode", a->mode, "complementarity aggregate: avg|max")->capture_default_str();
  cmd->add_option("--train-features", a->train_features, "reference set for knn");
  cmd->add_option("--k", a->knn_k, "neighbours for knn")->capture_default_str();
  cmd->add_option("--recall-k", a->recall_k, "comma-separated K list")->capture_default_str();
  cmd->add_option("--dump-attention", a->dump_attention, "write per-sample predictor attention as JSON-lines");
  cmd->callback([&action, a] { action = [a] { run_analyze(*a); }; });
}

// ---- knn / retrieval ------------------------------------------------------

struct FeatureArgs {
  std::string checkpoint, features, train_features, out;
  bool cls = false;
  std::size_t k = analysis::kDefaultKnnK;
  std::string ks = "1,2,4,8";
};

Json feature_run(const char* name, const FeatureArgs& a) {
  Json run;
  run["subcommand"] = name;
  run["paths"] = {
      {"checkpoint", a.checkpoint}, {"features", a.features}, {"train_features", a.train_features}, {"out", a.out}};
  run["pooling"] = a.checkpoint.empty() ? (a.cls ? "cls" : "mean") : "checkpoint";
  return run;
}

void add_knn(CLI::App& app, std::function<void()>& action) {
  auto a = std::make_shared<FeatureArgs>();
  auto* cmd = app.add_subcommand("knn", "Cosine k-NN accuracy of pooled features");
  cmd->add_option("--checkpoint", a->checkpoint, "pool with a trained probe (mean token otherwise)");
  cmd->add_option("--train-features", a->train_features)->required();
  cmd->add_option("--features", a->features, "query set")->required();
  cmd->add_flag("--cls", a->cls, "use the CLS token when no checkpoint is given");
  cmd->add_option("--k", a->k)->capture_default_str();
  cmd->add_option("--out", a->out);
  cmd->callback([&action, a] {
    action = [a] {
      std::optional<training::ProbeCheckpoint> ck;
      if (!a->checkpoint.empty()) ck = training::load_checkpoint(a->checkpoint);
      const auto train = data::read_fprobe(a->train_features);
      const auto query = data::read_fprobe(a->features);
      const auto tf = pooled_features(ck ? &*ck : nullptr, train, a->cls);
      const auto qf = pooled_features(ck ? &*ck : nullptr, query, a->cls);
      Json out;
      out["metric"] = "knn";
      out["k"] = a->k;
      out["value"] = analysis::knn_eval(tf, train.labels, qf, query.labels, a->k);
      Json run = feature_run("knn", *a);
      run["k"] = a->k;
      run["seed"] = ck ? ck->hyper.seed : 0;
      out["run"] = run;
      emit(a->out, line(out));
    };
  });
}

void add_retrieval(CLI::App& app, std::function<void()>& action) {
  auto a = std::make_shared<FeatureArgs>();
  auto* cmd = app.add_subcommand("retrieval", "Recall@K of pooled features, every sample as a query");
  cmd->add_option("--checkpoint", a->checkpoint, "pool with a trained probe (mean token otherwise)");
  cmd->add_option("--features", a->features)->required();
  cmd->add_flag("--cls", a->cls, "use the CLS token when no checkpoint is given");
  cmd->add_option("--k", a->ks, "comma-separated K list")->capture_default_str();
  cmd->add_option("--out", a->out);
  cmd->callback([&action, a] {
    action = [a] {
      std::optional<training::ProbeCheckpoint> ck;
      if (!a->checkpoint.empty()) ck = training::load_checkpoint(a->checkpoint);
      const auto set = data::read_fprobe(a->features);
      const auto ks = parse_ks(a->ks);
      Json out;
      out["metric"] = "recall";
      out["k"] = ks;
      out["per_k"] = analysis::recall_at_k(pooled_features(ck ? &*ck : nullptr, set, a->cls), set.labels, ks);
      Json run = feature_run("retrieval", *a);
      run["k"] = a->ks;
      run["seed"] = ck ? ck->hyper.seed : 0;
      out["run"] = run;
      emit(a->out, line(out));
    };
  });
}

// ---- cost -----------------------------------------------------------------

struct CostArgs {
  std::string method = "ep";
  std::uint32_t in_dim = 0;
  std::string out_dim = "full";
  std::string attn_dim;
  std::uint32_t queries = 1;
  std::uint32_t classes = 1000;
  std::uint32_t tokens = 196;
  std::string config_file;
  std::string extra_dims;
  std::string out;
};

void run_cost(const CostArgs& a, const CLI::App& cmd) {
  pooling::PoolConfig config;
  if (!a.config_file.empty()) {
    const auto bytes = data::read_file(a.config_file);
    try {
      config = pooling::config_from_json(
          nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(a.config_file + ": " + e.what());
    }
  } else {
    if (a.in_dim == 0) throw ValidationError("--di is required without --config");
    const auto method = pooling::method_from_string(a.method);
    std::optional<std::uint32_t> attn;
    if (!a.attn_dim.empty()) attn = parse_dim(a.attn_dim, a.in_dim);
    std::optional<std::uint32_t> out;
    if (cmd.count("--do") > 0 || method != pooling::Method::coca) out = parse_dim(a.out_dim, a.in_dim);
    config = pooling::make_config(method, a.in_dim, a.queries, out, attn);
  }
  config.validate();
  std::vector<std::uint32_t> extra;
  for (const auto& d : split(a.extra_dims, ',')) extra.push_back(parse_dim(d, config.in_dim));

  const auto params = cost::param_count(config, a.classes, extra);
  const auto flops = cost::flop_count(config, a.tokens);
  cost::CostBreakdown merged = params;
  merged.flops = flops.flops;
  merged.total_flops = flops.total_flops;

  Json out;
  out["config"] = pooling::to_json(config);
  out.update(cost::to_json(merged));
  out["attention_params"] = cost::attention_params(config);
  Json run;
  run["subcommand"] = "cost";
  run["classes"] = a.classes;
  run["tokens"] = a.tokens;
  run["extra_classifier_dims"] = extra;
  run["seed"] = 0;
  out["run"] = run;
  emit(a.out, out.dump(2) + "\n");
}

void add_cost(CLI::App& app, std::function<void()>& action) {
  auto a = std::make_shared<CostArgs>();
  auto* cmd = app.add_subcommand("cost", "Parameter and FLOP counts of a pooling configuration");
  cmd->add_option("--method", a->method)->capture_default_str();
  cmd->add_option("--di", a->in_dim, "input width");
  cmd->add_option("--do", a->out_dim, "output width: full|half|quarter|eighth|<n>")->capture_default_str();
  cmd->add_option("--da", a->attn_dim, "attention width");
  cmd->add_option("--queries,--heads", a->queries)->capture_default_str();
  cmd->add_option("--classes", a->classes)->capture_default_str();
  cmd->add_option("--tokens", a->tokens)->capture_default_str();
  cmd->add_option("--config", a->config_file, "pool configuration JSON instead of --method and dims");
  cmd->add_option("--extra-classifiers", a->extra_dims, "prefix dims of additional classifiers (vanilla Matryoshka)");
  cmd->add_option("--out", a->out);
  cmd->callback([&action, a, cmd] { action = [a, cmd] { run_cost(*a, *cmd); }; });
}

// ---- pareto ---------------------------------------------------------------

void run_pareto(const std::string& in_path, const std::string& out_path) {
  const auto bytes = data::read_file(in_path);
  std::istringstream in(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::string row;
  std::vector<cost::ParetoPoint> points;
  std::size_t line_no = 0;
  while (std::getline(in, row)) {
    ++line_no;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty() || (line_no == 1 && row.rfind("label", 0) == 0)) continue;
    const auto fields = split(row, ',');
    if (fields.size() != 3) throw FormatError(in_path + ":" + std::to_string(line_no) + ": expected label,accuracy,cost");
    points.push_back({fields[0], parse_double(fields[1], "accuracy"), parse_double(fields[2], "cost")});
  }
  std::ostringstream out;
  out << "label,accuracy,cost\n";
  for (const auto& p : cost::pareto_frontier(points)) {
    out << p.label << ',' << format_double(p.accuracy) << ',' << format_double(p.cost) << '\n';
  }
  emit(out_path, out.str());
}

void add_pareto(CLI::App& app, std::function<void()>& action) {
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto* cmd = app.add_subcommand("pareto", "Accuracy-cost Pareto frontier of a label,accuracy,cost CSV");
  cmd->add_option("--in", *in)->required();
  cmd->add_option("--out", *out);
  cmd->callback([&action, in, out] { action = [in, out] { run_pareto(*in, *out); }; });
}

}  // namespace

void register_commands(CLI::App& app, std::function<void()>& action) {
  add_synth(app, action);
  add_train(app, action);
  add_eval(app, action);
  add_analyze(app, action);
  add_cost(app, action);
  add_knn(app, action);
  add_retrieval(app, action);
  add_pareto(app, action);
  app.require_subcommand(1);
}

}  // namespace probekit::cli
