#include "probekit/data/subset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"
#include "probekit/data/fprobe.hpp"

namespace probekit::data {

std::vector<std::size_t> stratified_subset(const FeatureSet& set, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ValidationError("stratified_subset: fraction must lie in (0, 1]");
  }
  std::vector<std::vector<std::size_t>> by_class(set.num_classes);
  for (std::size_t i = 0; i < set.labels.size(); ++i) by_class[set.labels[i]].push_back(i);

  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    const auto take = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
    Rng rng(derive_seed(seed, "subset/class/" + std::to_string(c)));
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, members.size() - 1);
      std::swap(members[k], members[pick(rng)]);
    }
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> indices,
                                                    std::size_t batch_size,
                                                    std::optional<std::uint64_t> shuffle_seed,
                                                    std::size_t epoch) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (indices.empty()) throw ValidationError("batch iteration over an empty index list");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  if (shuffle_seed) {
    Rng rng(derive_seed(*shuffle_seed, "batches/epoch/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const auto end = std::min(order.size(), b + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchIterator::BatchIterator(const FeatureSet& set, std::span<const Sample> samples,
                             std::span<const std::size_t> indices, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed, std::size_t epoch)
    : set_(&set),
      samples_(samples),
      batches_(epoch_batches(indices, batch_size, shuffle_seed, epoch)) {}

Batch BatchIterator::next() {
  if (done()) throw ValidationError("BatchIterator exhausted");
  Batch batch;
  batch.indices = batches_[next_++];
  for (auto i : batch.indices) {
    batch.samples.push_back(&samples_[i]);
    batch.labels.push_back(set_->labels[i]);
  }
  return batch;
}

namespace {

void check_indices(const std::vector<std::size_t>& idx, std::size_t size, const char* which) {
  std::set<std::size_t> seen;
  for (auto i : idx) {
    if (i >= size) throw ValidationError(std::string("manifest: ") + which + " index out of range");
    if (!seen.insert(i).second) {
      throw ValidationError(std::string("manifest: duplicate ") + which + " index");
    }
  }
}

}  // namespace

void SplitManifest::validate(std::size_t train_size, std::size_t val_size) const {
  if (train_indices) check_indices(*train_indices, train_size, "train");
  if (val_indices) check_indices(*val_indices, val_size, "val");
  if (fraction && (!(*fraction > 0.0) || *fraction > 1.0)) {
    throw ValidationError("manifest: fraction must lie in (0, 1]");
  }
}

std::string manifest_to_json(const SplitManifest& m) {
  nlohmann::ordered_json j;
  j["train_file"] = m.train_file;
  j["val_file"] = m.val_file;
  if (m.train_indices) j["train_indices"] = *m.train_indices;
  if (m.val_indices) j["val_indices"] = *m.val_indices;
  if (m.fraction) j["fraction"] = *m.fraction;
  if (m.seed) j["seed"] = *m.seed;
  return j.dump(2) + "\n";
}

SplitManifest manifest_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    SplitManifest m;
    m.train_file = j.at("train_file").get<std::string>();
    m.val_file = j.at("val_file").get<std::string>();
    if (j.contains("train_indices")) m.train_indices = j["train_indices"].get<std::vector<std::size_t>>();
    if (j.contains("val_indices")) m.val_indices = j["val_indices"].get<std::vector<std::size_t>>();
    if (j.contains("fraction")) m.fraction = j["fraction"].get<double>();
    if (j.contains("seed")) m.seed = j["seed"].get<std::uint64_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

SplitManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return manifest_from_json(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_json(manifest));
}

}  // namespace probekit::data
