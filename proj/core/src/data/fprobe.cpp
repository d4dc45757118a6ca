#include "probekit/data/fprobe.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "probekit/common/error.hpp"

namespace probekit::data {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) u8(static_cast<std::uint8_t>(s[i]));
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CorruptionError("FPROBE: truncated payload");
  }
  [[nodiscard]] std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> encode_fprobe(const FeatureSet& set) {
  set.validate();
  Writer w;
  w.raw("FPRB", 4);
  w.u32(kFprobeVersion);
  w.u32(set.samples);
  w.u32(set.tokens);
  w.u32(set.channels);
  w.u32(set.num_classes);
  w.u32(set.grid_w);
  w.u32(set.grid_h);
  w.u8(set.cls_tokens ? 1 : 0);
  w.u8(set.bboxes ? 1 : 0);
  w.u8(0);
  w.u8(0);
  for (auto l : set.labels) w.u32(l);
  if (set.cls_tokens) {
    for (float v : *set.cls_tokens) w.f32(v);
  }
  if (set.bboxes) {
    for (const auto& boxes : *set.bboxes) {
      w.u32(static_cast<std::uint32_t>(boxes.size()));
      for (const auto& b : boxes) {
        w.u32(b.xmin);
        w.u32(b.ymin);
        w.u32(b.xmax);
        w.u32(b.ymax);
      }
    }
  }
  for (float v : set.features) w.f32(v);
  return w.take();
}

FeatureSet decode_fprobe(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FPRB", 4) != 0) {
    throw FormatError("FPROBE: bad magic");
  }
  Reader r(bytes.subspan(4));
  if (r.remaining() < kFprobeHeaderBytes - 4) throw CorruptionError("FPROBE: truncated header");
  const auto version = r.u32();
  if (version != kFprobeVersion) {
    throw FormatError("FPROBE: unsupported version " + std::to_string(version));
  }
  FeatureSet set;
  set.samples = r.u32();
  set.tokens = r.u32();
  set.channels = r.u32();
  set.num_classes = r.u32();
  set.grid_w = r.u32();
  set.grid_h = r.u32();
  const bool has_cls = r.u8() != 0;
  const bool has_bbox = r.u8() != 0;
  r.u8();
  r.u8();

  const std::size_t s = set.samples;
  r.need(s * 4);
  set.labels.resize(s);
  for (auto& l : set.labels) l = r.u32();
  if (has_cls) {
    const std::size_t n = s * set.channels;
    r.need(n * 4);
    set.cls_tokens.emplace(n);
    for (auto& v : *set.cls_tokens) v = r.f32();
  }
  if (has_bbox) {
    set.bboxes.emplace(s);
    for (auto& boxes : *set.bboxes) {
      const auto count = r.u32();
      r.need(static_cast<std::size_t>(count) * 16);
      boxes.resize(count);
      for (auto& b : boxes) {
        b.xmin = r.u32();
        b.ymin = r.u32();
        b.xmax = r.u32();
        b.ymax = r.u32();
      }
    }
  }
  const std::size_t n = s * set.tokens * set.channels;
  r.need(n * 4);
  set.features.resize(n);
  for (auto& v : set.features) v = r.f32();
  if (r.remaining() != 0) throw CorruptionError("FPROBE: trailing bytes after payload");
  set.validate();
  return set;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(buf.size());
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename onto " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

void write_fprobe(const FeatureSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, encode_fprobe(set));
}

FeatureSet read_fprobe(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_fprobe(bytes);
}

}  // namespace probekit::data
