// Exit gate: one PASS/FAIL line per acceptance criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "probekit/analysis/metrics.hpp"
#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"
#include "probekit/cost/cost_model.hpp"
#include "probekit/data/fprobe.hpp"
#include "probekit/data/subset.hpp"
#include "probekit/data/synthetic.hpp"
#include "probekit/pooling/forward.hpp"
#include "probekit/training/train.hpp"
#include "support/fixtures.hpp"

using namespace probekit;
using pooling::make_config;
using pooling::Method;
using testing::random_matrix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

Outcome conversion_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  const std::uint32_t dims[] = {8, 16, 32, 64};
  const std::uint32_t heads[] = {1, 2, 4, 8};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::uint32_t di = dims[i % 4];
    const std::uint32_t m = heads[(i / 4) % 4];
    std::uint32_t da = di;
    if ((di / 2) % m == 0 && rng() % 2 == 0) da = di / 2;
    auto config = make_config(Method::mhca_lq, di, m, di, da);
    config.bias.key = i % 2 == 1;
    auto params = pooling::init_params(config, static_cast<std::uint64_t>(i));
    testing::randomize(params, rng);
    const auto converted = pooling::mhca_to_mqca(config, params);
    const auto x = random_matrix(di, 1 + static_cast<Eigen::Index>(rng() % 24), rng);
    const auto a = pooling::forward(config, params, x);
    const auto b = pooling::forward(converted.config, converted.params, x);
    worst = std::max(worst, (a.attention.logits - b.attention.logits).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.feature.y - b.feature.y).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-10 && elapsed < 5.0,
          "100 instances, max abs diff " + fmt(worst, 3) + ", " + fmt(elapsed, 2) + " s"};
}

Outcome abmilp_specialization() {
  std::mt19937_64 rng(77);
  int identical = 0;
  for (int i = 0; i < 50; ++i) {
    const std::uint32_t dim = 4 + static_cast<std::uint32_t>(rng() % 29);
    const auto ab = make_config(Method::abmilp, dim, 1);
    auto abp = pooling::init_params(ab, static_cast<std::uint64_t>(i));
    testing::randomize(abp, rng);
    auto ep = make_config(Method::ep, dim, 1);
    ep.value_transform = pooling::Transform::identity;
    ep.bias.attn = true;
    auto epp = pooling::init_params(ep, static_cast<std::uint64_t>(i));
    *epp.queries = abp.u->transpose();
    *epp.attn_bias = *abp.attn_bias;
    const auto x = random_matrix(dim, 1 + static_cast<Eigen::Index>(rng() % 30), rng);
    const auto a = pooling::forward(ab, abp, x);
    const auto b = pooling::forward(ep, epp, x);
    identical += a.feature.y == b.feature.y && a.attention.values == b.attention.values;
  }
  return {identical == 50, std::to_string(identical) + "/50 bit-identical"};
}

Outcome gradient_oracle() {
  const auto start = Clock::now();
  const Method methods[] = {Method::gap,     Method::ep,    Method::abmilp,  Method::aim, Method::delf,
                            Method::simpool, Method::mhca,  Method::mhca_lq, Method::mhca_idk,
                            Method::vjepa,   Method::cae,   Method::siglip,  Method::coca};
  double worst = 0.0;
  std::string worst_method;
  for (const auto method : methods) {
    std::optional<pooling::PoolConfig> config;
    for (std::uint32_t heads : {2U, 3U, 1U}) {
      try {
        auto c = make_config(method, 6, heads);
        c.validate();
        config = c;
        break;
      } catch (const ValidationError&) {
      }
    }
    if (!config) return {false, std::string(pooling::to_string(method)) + " has no valid D_i=6 configuration"};
    const std::uint32_t f = config->feature_dim();
    training::LossConfig loss;
    if (f % 2 == 0) loss.matryoshka = {{f, 1.0}, {f / 2, 0.5}};
    loss.attn_sim_weight = 0.7;

    std::mt19937_64 rng(31);
    auto probe = training::init_probe(*config, loss, 3, 31);
    testing::randomize(probe, rng);
    const auto samples = testing::random_samples(2, 6, 5, rng, true);
    const data::Sample* ptrs[] = {&samples[0], &samples[1]};
    const std::uint32_t labels[] = {0, 2};
    const training::BatchView batch{ptrs, labels};

    pooling::ForwardOptions options;
    pooling::NormStats stats;
    if (config->input_norm == pooling::InputNorm::batchnorm) {
      const Eigen::MatrixXd* xs[] = {&samples[0].x, &samples[1].x};
      stats = pooling::batch_norm_stats(xs);
      options.batch_stats = &stats;
    }
    const auto analytic = training::backward(probe, batch, loss, options);
    const auto numeric = training::finite_diff_grad(probe, batch, loss, 1e-5, options);
    const double err = testing::max_relative_error(analytic.grads, numeric);
    if (err > worst) {
      worst = err;
      worst_method = pooling::to_string(method);
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-4 && elapsed < 30.0, "13 methods, worst relative error " + fmt(worst, 3) + " (" +
                                               worst_method + "), " + fmt(elapsed, 2) + " s"};
}

Outcome rebuttal_param_counts() {
  const std::uint64_t got[] = {
      cost::param_count(make_config(Method::abmilp, 768, 1), 1000).total_params,
      cost::param_count(make_config(Method::aim, 768, 12), 1000).total_params,
      cost::param_count(make_config(Method::ep, 768, 48), 1000).total_params,
      cost::param_count(make_config(Method::ep, 768, 96, 384), 1000).total_params,
  };
  const std::uint64_t want[] = {769'769, 1'949'416, 1'395'688, 753'640};
  std::string detail;
  bool pass = true;
  for (int i = 0; i < 4; ++i) {
    pass = pass && got[i] == want[i];
    detail += (i ? ", " : "") + std::to_string(got[i]);
  }
  return {pass, detail};
}

Outcome closed_form_counts() {
  int matched = 0;
  int total = 0;
  for (std::uint32_t di : {8U, 16U, 32U, 64U, 128U}) {
    for (std::uint32_t m : {1U, 2U, 4U, 8U}) {
      ++total;
      const std::uint32_t da = di;
      auto ab = make_config(Method::abmilp, di, 1);
      ab.bias.attn = false;
      const bool ok = cost::attention_params(make_config(Method::mhca, di, m, di, da)) == da * (2 * di + 1) &&
                      cost::attention_params(make_config(Method::mhca_lq, di, m, di, da)) == da * (di + 1) &&
                      cost::attention_params(make_config(Method::ep, di, m)) == di * m &&
                      cost::attention_params(ab) == di;
      matched += ok;
    }
  }
  return {matched == total, std::to_string(matched) + "/" + std::to_string(total) + " configs"};
}

Outcome flop_ratio() {
  const auto block = cost::flop_count(make_config(Method::vjepa, 768, 12), 196).total_flops;
  const auto ep = cost::flop_count(make_config(Method::ep, 768, 48), 196).total_flops;
  const double ratio = static_cast<double>(block) / static_cast<double>(ep);
  return {ratio >= 10.0, "V-JEPA block " + std::to_string(block) + " / EP_48 " + std::to_string(ep) + " = " +
                             fmt(ratio, 4) + "x"};
}

// Criteria 7, 8 and 10 share one set of trained probes.
struct SyntheticRun {
  data::FeatureSet set;
  std::vector<data::Sample> samples;
  std::vector<std::size_t> train_idx, val_idx;
  training::Probe ep, gap, matryoshka;
};

const SyntheticRun& synthetic_run() {
  static const SyntheticRun run = [] {
    SyntheticRun r;
    data::SynthSpec spec;
    spec.classes = 8;
    spec.samples_per_class = 200;
    spec.tokens = 64;
    spec.channels = 32;
    spec.grid_w = spec.grid_h = 8;
    spec.fg_tokens_per_sample = 4;
    spec.seed = 7;
    r.set = data::generate_synthetic(spec);
    r.samples = data::materialize(r.set);
    r.val_idx = data::stratified_subset(r.set, 0.25, derive_seed(spec.seed, "split"));
    std::size_t next = 0;
    for (std::size_t s = 0; s < r.set.samples; ++s) {
      if (next < r.val_idx.size() && r.val_idx[next] == s) {
        ++next;
      } else {
        r.train_idx.push_back(s);
      }
    }
    training::HyperParams hyper;
    hyper.seed = spec.seed;
    auto fit = [&](const pooling::PoolConfig& c, const training::LossConfig& loss) {
      return training::train(c, loss, hyper, r.set, r.set, r.train_idx, r.val_idx).checkpoint.probe;
    };
    r.ep = fit(make_config(Method::ep, 32, 8), {});
    r.gap = fit(make_config(Method::gap, 32, 1), {});
    r.matryoshka = fit(make_config(Method::ep, 32, 8), {{{32, 1.0}, {16, 1.0}, {8, 1.0}}});
    return r;
  }();
  return run;
}

double val_top1(const SyntheticRun& r, const training::Probe& probe, std::optional<std::size_t> prefix = {}) {
  return training::evaluate(probe, r.samples, r.set.labels, r.val_idx, prefix);
}

std::vector<double> foreground_mass_per_predictor(const SyntheticRun& r) {
  const auto outputs = training::forward_all(r.ep, r.samples, r.val_idx);
  std::vector<double> mass(r.ep.config.heads, 0.0);
  for (std::size_t s = 0; s < outputs.size(); ++s) {
    const auto& boxes = (*r.set.bboxes)[r.val_idx[s]];
    for (std::size_t j = 0; j < mass.size(); ++j) {
      mass[j] += analysis::bbox_mass(outputs[s].predictor_attention.row(static_cast<Eigen::Index>(j)).transpose(),
                                     r.set.grid_w, r.set.grid_h, boxes);
    }
  }
  for (auto& v : mass) v /= static_cast<double>(outputs.size());
  return mass;
}

Outcome synthetic_end_to_end() {
  const auto start = Clock::now();
  const auto& r = synthetic_run();
  const double ep = val_top1(r, r.ep);
  const double gap = val_top1(r, r.gap);
  const auto mass = foreground_mass_per_predictor(r);
  double mean_mass = 0.0;
  for (double v : mass) mean_mass += v / static_cast<double>(mass.size());
  const double baseline = 4.0 / 64.0;
  return {ep - gap >= 0.10 && mean_mass >= 2.0 * baseline,
          "EP_8 " + fmt(ep) + " vs GAP " + fmt(gap) + ", fg mass " + fmt(mean_mass) + " (" +
              fmt(mean_mass / baseline, 3) + "x uniform), " + fmt(seconds_since(start), 3) + " s"};
}

Outcome localization_correlation() {
  const auto& r = synthetic_run();
  const auto mass = foreground_mass_per_predictor(r);
  std::vector<double> delta;
  for (std::uint32_t j = 0; j < r.ep.config.heads; ++j) {
    delta.push_back(analysis::uniform_replacement_delta(r.ep, r.samples, r.set.labels, j, r.val_idx));
  }
  const double rho = analysis::spearman(mass, delta);
  return {rho > 0.0, "Spearman(bbox mass, delta) over 8 predictors = " + fmt(rho, 3)};
}

Outcome metric_unit_values() {
  const Eigen::Vector4d uniform = Eigen::Vector4d::Constant(0.25);
  const bool entropy = std::abs(analysis::attention_entropy(uniform) - std::log(4.0)) <= 1e-12;
  Eigen::MatrixXd same(3, 4);
  same.rowwise() = Eigen::RowVector4d(0.1, 0.2, 0.3, 0.4);
  const bool identical = analysis::complementarity(same) == 0.0;
  const bool disjoint = analysis::complementarity(Eigen::MatrixXd::Identity(4, 4)) == 1.0;
  const data::BBox one_cell[] = {{1, 1, 1, 1}};
  const bool bbox = analysis::bbox_mass(uniform, 2, 2, one_cell) == 0.25;
  std::string detail = std::string("entropy ") + (entropy ? "ok" : "off") + ", complementarity identical " +
                       fmt(analysis::complementarity(same), 3) + ", disjoint " +
                       fmt(analysis::complementarity(Eigen::MatrixXd::Identity(4, 4)), 3) + ", bbox " +
                       fmt(analysis::bbox_mass(uniform, 2, 2, one_cell), 3);
  return {entropy && identical && disjoint && bbox, detail};
}

Outcome matryoshka_ordering() {
  const auto& r = synthetic_run();
  const double plain_q = val_top1(r, r.ep, 8);
  const double mat_q = val_top1(r, r.matryoshka, 8);
  const double plain_full = val_top1(r, r.ep);
  const double mat_full = val_top1(r, r.matryoshka);
  return {mat_q > plain_q && plain_full >= mat_full, "prefix 8: matryoshka " + fmt(mat_q) + " vs plain " +
                                                         fmt(plain_q) + "; full: plain " + fmt(plain_full) +
                                                         " vs matryoshka " + fmt(mat_full)};
}

Outcome cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("probekit_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string cli = PROBEKIT_CLI_PATH;
  const std::string cd = "cd '" + dir.string() + "' && ";
  auto sh = [&](const std::string& args) { return std::system((cd + "'" + cli + "' " + args + " > /dev/null").c_str()); };

  Outcome out;
  if (sh("synth --classes 3 --samples-per-class 20 --tokens 16 --dim 8 --fg 2 --seed 3 --out s.fprb "
         "--val-fraction 0.25 --manifest m.json") != 0) {
    out.detail = "synth failed";
  } else {
    const std::string train = "train --manifest m.json --method ep --queries 2 --epochs 4 --warmup 1 "
                              "--matryoshka 1.0:full,1.0:half --seed 11 --checkpoint p.ckpt --report p.jsonl";
    const int first = sh(train);
    const auto ckpt_a = first == 0 ? data::read_file(dir / "p.ckpt") : std::vector<std::byte>{};
    const auto report_a = first == 0 ? data::read_file(dir / "p.jsonl") : std::vector<std::byte>{};
    const int second = sh(train);
    if (first != 0 || second != 0) {
      out.detail = "train exited with " + std::to_string(first) + "/" + std::to_string(second);
    } else {
      const bool same_ckpt = ckpt_a == data::read_file(dir / "p.ckpt");
      const bool same_report = report_a == data::read_file(dir / "p.jsonl");
      out.pass = same_ckpt && same_report && !ckpt_a.empty() && !report_a.empty();
      out.detail = "checkpoint " + std::string(same_ckpt ? "identical" : "differs") + " (" +
                   std::to_string(ckpt_a.size()) + " B), report " + (same_report ? "identical" : "differs") +
                   " (" + std::to_string(report_a.size()) + " B)";
    }
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const Criterion criteria[] = {
      {1, "mhca_mqca_equivalence", conversion_equivalence},
      {2, "abmilp_specialization", abmilp_specialization},
      {3, "gradient_oracle", gradient_oracle},
      {4, "rebuttal_param_counts", rebuttal_param_counts},
      {5, "closed_form_counts", closed_form_counts},
      {6, "flop_ratio", flop_ratio},
      {7, "synthetic_end_to_end", synthetic_end_to_end},
      {8, "localization_correlation", localization_correlation},
      {9, "metric_unit_values", metric_unit_values},
      {10, "matryoshka_ordering", matryoshka_ordering},
      {11, "cli_determinism", cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %-26s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
