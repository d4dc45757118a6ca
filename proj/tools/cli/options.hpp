#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/data/feature_set.hpp"
#include "probekit/pooling/config.hpp"
#include "probekit/training/loss.hpp"
#include "probekit/training/train.hpp"

namespace probekit::cli {

using Json = nlohmann::ordered_json;

/// "full", "half", "quarter", "eighth" or a positive integer, resolved
/// against the input width.
std::uint32_t parse_dim(const std::string& text, std::uint32_t in_dim);

/// "1.0:full,0.5:half" -> Matryoshka terms, dims resolved against `in_dim`.
std::vector<training::MatryoshkaTerm> parse_matryoshka(const std::string& text, std::uint32_t in_dim);

std::vector<std::string> split(const std::string& text, char sep);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const char* what);

training::Optimizer optimizer_from_string(const std::string& s);
training::MatryoshkaMode matryoshka_mode_from_string(const std::string& s);

/// Train and validation data after resolving a manifest or plain files.
struct Inputs {
  data::FeatureSet train;
  data::FeatureSet val;
  std::vector<std::size_t> train_indices;  ///< empty: every sample
  std::vector<std::size_t> val_indices;
};

/// Manifest paths are taken relative to the manifest's directory. Without a
/// manifest `val` falls back to `train_path`.
Inputs load_inputs(const std::string& train_path, const std::string& val_path, const std::string& manifest);

/// Reads the first line of `path` as JSON and returns its "run" object (or
/// the whole object when it has none). Accepts reports and checkpoints.
Json read_run(const std::filesystem::path& path);

/// Writes `text` atomically to `path`, or to stdout when `path` is empty.
void emit(const std::string& path, const std::string& text);

/// Pooled feature of every sample as columns. Without a checkpoint the mean
/// token (or the CLS token) stands in for a learned pool.
Eigen::MatrixXd pooled_features(const training::ProbeCheckpoint* checkpoint, const data::FeatureSet& set,
                                bool use_cls);

}  // namespace probekit::cli
