#include "options.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <iostream>
#include <sstream>

#include "probekit/common/error.hpp"
#include "probekit/data/fprobe.hpp"
#include "probekit/data/subset.hpp"

namespace probekit::cli {

namespace {

std::string lower(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

template <class T>
T parse_number(const std::string& text, const char* what) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ValidationError(std::string(what) + ": cannot parse '" + text + "'");
  return value;
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

double parse_double(const std::string& text, const char* what) { return parse_number<double>(text, what); }

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint32_t parse_dim(const std::string& text, std::uint32_t in_dim) {
  const std::string key = lower(text);
  std::uint32_t divisor = 0;
  if (key == "full") divisor = 1;
  if (key == "half") divisor = 2;
  if (key == "quarter") divisor = 4;
  if (key == "eighth") divisor = 8;
  if (divisor == 0) {
    const auto value = parse_number<std::uint32_t>(text, "dimension");
    if (value == 0) throw ValidationError("dimension must be positive");
    return value;
  }
  if (in_dim % divisor != 0) {
    throw ValidationError("'" + text + "' needs an input width divisible by " + std::to_string(divisor) + ", got " +
                          std::to_string(in_dim));
  }
  return in_dim / divisor;
}

std::vector<training::MatryoshkaTerm> parse_matryoshka(const std::string& text, std::uint32_t in_dim) {
  std::vector<training::MatryoshkaTerm> terms;
  for (const auto& item : split(text, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ValidationError("matryoshka term '" + item + "' is not weight:dim");
    const double weight = parse_number<double>(item.substr(0, colon), "matryoshka weight");
    terms.push_back({parse_dim(item.substr(colon + 1), in_dim), weight});
  }
  return terms;
}

training::Optimizer optimizer_from_string(const std::string& s) {
  const auto key = lower(s);
  if (key == "sgd" || key == "sgd_momentum") return training::Optimizer::sgd_momentum;
  if (key == "lars") return training::Optimizer::lars;
  throw ValidationError("unknown optimizer '" + s + "'");
}

training::MatryoshkaMode matryoshka_mode_from_string(const std::string& s) {
  const auto key = lower(s);
  if (key == "efficient") return training::MatryoshkaMode::efficient;
  if (key == "vanilla") return training::MatryoshkaMode::vanilla;
  throw ValidationError("unknown matryoshka mode '" + s + "'");
}

Inputs load_inputs(const std::string& train_path, const std::string& val_path, const std::string& manifest) {
  Inputs in;
  if (manifest.empty()) {
    if (train_path.empty()) throw ValidationError("--features or --manifest is required");
    in.train = data::read_fprobe(train_path);
    in.val = val_path.empty() || val_path == train_path ? in.train : data::read_fprobe(val_path);
    return in;
  }
  const auto m = data::read_manifest(manifest);
  const auto base = std::filesystem::path(manifest).parent_path();
  in.train = data::read_fprobe(base / m.train_file);
  in.val = m.val_file == m.train_file ? in.train : data::read_fprobe(base / m.val_file);
  m.validate(in.train.samples, in.val.samples);
  if (m.train_indices) in.train_indices = *m.train_indices;
  if (m.val_indices) in.val_indices = *m.val_indices;
  if (m.fraction) {
    if (m.train_indices) throw ValidationError("manifest: fraction and train_indices are mutually exclusive");
    in.train_indices = data::stratified_subset(in.train, *m.fraction, m.seed.value_or(0));
  }
  return in;
}

Json read_run(const std::filesystem::path& path) {
  const auto bytes = data::read_file(path);
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  text = text.substr(0, text.find('\n'));
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": first line is not JSON: " + e.what());
  }
  if (j.contains("run") && j["run"].is_object()) return j["run"];
  return j;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << std::flush;
  } else {
    data::write_file_atomic(path, text);
  }
}

Eigen::MatrixXd pooled_features(const training::ProbeCheckpoint* checkpoint, const data::FeatureSet& set,
                                bool use_cls) {
  const auto samples = data::materialize(set);
  if (checkpoint) {
    training::check_compatible(*checkpoint, set);
    const auto outputs = training::forward_all(checkpoint->probe, samples);
    Eigen::MatrixXd f(checkpoint->probe.config.feature_dim(), static_cast<Eigen::Index>(outputs.size()));
    for (std::size_t s = 0; s < outputs.size(); ++s) f.col(static_cast<Eigen::Index>(s)) = outputs[s].feature.y;
    return f;
  }
  if (use_cls && !set.cls_tokens) throw ValidationError("--cls requested but the feature file has no CLS tokens");
  Eigen::MatrixXd f(set.channels, set.samples);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    f.col(static_cast<Eigen::Index>(s)) = use_cls ? *samples[s].cls : Eigen::VectorXd(samples[s].x.rowwise().mean());
  }
  return f;
}

}  // namespace probekit::cli
