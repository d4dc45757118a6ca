#include "probekit/training/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "probekit/common/error.hpp"
#include "probekit/data/fprobe.hpp"

namespace probekit::training {

namespace {

constexpr std::string_view kFormat = "probekit-checkpoint";

struct NamedTensor {
  std::string name;
  const Matrix* value;
};

std::vector<NamedTensor> tensors_of(const ProbeCheckpoint& ck) {
  std::vector<NamedTensor> out;
  for (const auto& slot : pooling::kPoolSlots)
    if (const auto& m = ck.probe.pool.*(slot.member)) out.push_back({std::string(slot.name), &*m});
  for (std::size_t k = 0; k < ck.probe.classifiers.size(); ++k) {
    const std::string base = "classifier." + std::to_string(k);
    out.push_back({base + ".weight", &ck.probe.classifiers[k].weight});
    out.push_back({base + ".bias", &ck.probe.classifiers[k].bias});
  }
  return out;
}

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffU));
    bits >>= 8;
  }
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

Matrix* target_for(ProbeCheckpoint& ck, const std::string& name) {
  for (const auto& slot : pooling::kPoolSlots) {
    if (slot.name == name) {
      auto& m = ck.probe.pool.*(slot.member);
      m.emplace();
      return &*m;
    }
  }
  constexpr std::string_view prefix = "classifier.";
  if (name.starts_with(prefix)) {
    const auto dot = name.find('.', prefix.size());
    if (dot != std::string::npos) {
      const std::size_t k = std::stoul(name.substr(prefix.size(), dot - prefix.size()));
      if (ck.probe.classifiers.size() <= k) ck.probe.classifiers.resize(k + 1);
      const auto field = name.substr(dot + 1);
      if (field == "weight") return &ck.probe.classifiers[k].weight;
      if (field == "bias") return &ck.probe.classifiers[k].bias;
    }
  }
  throw FormatError("checkpoint: unknown tensor '" + name + "'");
}

nlohmann::ordered_json metadata_json(const TrainMetadata& m) {
  return {{"epochs_run", m.epochs_run},
          {"final_train_loss", m.final_train_loss},
          {"final_val_top1", m.final_val_top1},
          {"seed", m.seed}};
}

}  // namespace

std::string encode_checkpoint(const ProbeCheckpoint& ck) {
  nlohmann::ordered_json header;
  header["format"] = kFormat;
  header["version"] = kCheckpointVersion;
  header["num_classes"] = ck.num_classes;
  header["pool_config"] = pooling::to_json(ck.probe.config);
  header["loss"] = to_json(ck.loss);
  header["hyper"] = to_json(ck.hyper);
  header["metadata"] = metadata_json(ck.metadata);
  if (!ck.run.is_null()) header["run"] = ck.run;

  std::string payload;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const auto& t : tensors_of(ck)) {
    manifest.push_back({{"name", t.name},
                        {"rows", t.value->rows()},
                        {"cols", t.value->cols()},
                        {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < t.value->size(); ++i) put_f64(payload, t.value->data()[i]);
  }
  header["tensors"] = manifest;
  header["payload_bytes"] = payload.size();
  return header.dump() + '\n' + payload;
}

ProbeCheckpoint decode_checkpoint(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw FormatError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  ProbeCheckpoint ck;
  try {
    if (header.at("format").get<std::string>() != kFormat) throw FormatError("checkpoint: wrong format tag");
    if (header.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("checkpoint: unsupported version " + header.at("version").dump());
    ck.num_classes = header.at("num_classes").get<std::uint32_t>();
    ck.probe.config = pooling::config_from_json(header.at("pool_config"));
    ck.loss = loss_config_from_json(header.at("loss"));
    ck.hyper = hyper_from_json(header.at("hyper"));
    const auto& meta = header.at("metadata");
    ck.metadata.epochs_run = meta.at("epochs_run").get<std::uint32_t>();
    ck.metadata.final_train_loss = meta.at("final_train_loss").get<double>();
    ck.metadata.final_val_top1 = meta.at("final_val_top1").get<double>();
    ck.metadata.seed = meta.at("seed").get<std::uint64_t>();
    if (header.contains("run")) ck.run = nlohmann::ordered_json::parse(header.at("run").dump());

    const std::string_view payload(bytes.data() + newline + 1, bytes.size() - newline - 1);
    const auto declared = header.at("payload_bytes").get<std::size_t>();
    if (payload.size() < declared) throw CorruptionError("checkpoint: payload truncated");
    if (payload.size() > declared) throw CorruptionError("checkpoint: trailing bytes after payload");
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = static_cast<std::size_t>(rows * cols);
      if (rows < 0 || cols < 0 || offset > declared || count > (declared - offset) / 8)
        throw CorruptionError("checkpoint: tensor '" + name + "' exceeds the payload");
      Matrix* m = target_for(ck, name);
      m->resize(rows, cols);
      for (std::size_t i = 0; i < count; ++i) m->data()[i] = get_f64(payload.data() + offset + 8 * i);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  ck.loss.validate(ck.probe.config.feature_dim());
  ck.probe.validate(ck.num_classes);
  return ck;
}

void save_checkpoint(const ProbeCheckpoint& checkpoint, const std::filesystem::path& path) {
  data::write_file_atomic(path, encode_checkpoint(checkpoint));
}

ProbeCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto raw = data::read_file(path);
  std::string bytes(raw.size(), '\0');
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return decode_checkpoint(bytes);
}

}  // namespace probekit::training
