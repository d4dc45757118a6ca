#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include "probekit/common/error.hpp"
#include "probekit/common/rng.hpp"
#include "probekit/data/fprobe.hpp"
#include "probekit/data/subset.hpp"
#include "probekit/data/synthetic.hpp"

using namespace probekit;
using namespace probekit::data;

namespace {

FeatureSet tiny_set() {
  FeatureSet s;
  s.samples = 2;
  s.tokens = 4;
  s.channels = 3;
  s.num_classes = 2;
  s.grid_w = 2;
  s.grid_h = 2;
  s.labels = {0, 1};
  for (int i = 0; i < 24; ++i) s.features.push_back(0.25f * static_cast<float>(i) - 1.0f);
  s.cls_tokens = std::vector<float>{1, 2, 3, 4, 5, 6};
  s.bboxes = std::vector<std::vector<BBox>>{{{0, 0, 1, 0}}, {{1, 1, 1, 1}, {0, 0, 0, 0}}};
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("probekit_test_" + name);
}

}  // namespace

TEST(Fprobe, RoundTripIsBitExact) {
  const auto s = tiny_set();
  const auto path = temp_file("roundtrip.fprb");
  write_fprobe(s, path);
  EXPECT_EQ(read_fprobe(path), s);
  std::filesystem::remove(path);
}

TEST(Fprobe, EmptyOptionalSectionsWriteZeroFlags) {
  auto s = tiny_set();
  s.cls_tokens.reset();
  s.bboxes.reset();
  const auto bytes = encode_fprobe(s);
  EXPECT_EQ(bytes[32], std::byte{0});
  EXPECT_EQ(bytes[33], std::byte{0});
  EXPECT_EQ(decode_fprobe(bytes), s);
}

TEST(Fprobe, SingleScalarFileSize) {
  FeatureSet s;
  s.samples = s.tokens = s.channels = s.num_classes = 1;
  s.labels = {0};
  s.features = {0.5f};
  // magic + version,S,N,D,C,grid_w,grid_h + two flag bytes + two pad bytes
  const std::size_t header = 4 + 7 * sizeof(std::uint32_t) + 2 + 2;
  EXPECT_EQ(encode_fprobe(s).size(), header + sizeof(std::uint32_t) + sizeof(float));
}

TEST(Fprobe, DeterministicBytes) {
  EXPECT_EQ(encode_fprobe(tiny_set()), encode_fprobe(tiny_set()));
}

TEST(Fprobe, BadMagicAndVersion) {
  auto bytes = encode_fprobe(tiny_set());
  auto bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  EXPECT_THROW(decode_fprobe(bad), FormatError);
  bad = bytes;
  bad[4] = std::byte{9};
  EXPECT_THROW(decode_fprobe(bad), FormatError);
}

TEST(Fprobe, TruncatedPayload) {
  FeatureSet s;
  s.samples = 2;
  s.tokens = 4;
  s.channels = 3;
  s.num_classes = 2;
  s.labels = {0, 1};
  s.features.assign(24, 1.0f);
  auto bytes = encode_fprobe(s);
  bytes.resize(bytes.size() - 12 * sizeof(float));  // only one sample of floats
  EXPECT_THROW(decode_fprobe(bytes), CorruptionError);
}

TEST(Fprobe, InvariantViolationsAreValidationErrors) {
  auto s = tiny_set();
  s.labels[1] = 5;
  EXPECT_THROW(s.validate(), ValidationError);
  s = tiny_set();
  s.grid_w = 3;
  EXPECT_THROW(s.validate(), ValidationError);
  s = tiny_set();
  s.features[3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(s.validate(), ValidationError);
  s = tiny_set();
  (*s.bboxes)[0][0].xmax = 2;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(Fprobe, UnwritablePath) {
  EXPECT_THROW(write_fprobe(tiny_set(), "/nonexistent_dir/x/y.fprb"), IoError);
  EXPECT_THROW(read_fprobe("/nonexistent_dir/x/y.fprb"), IoError);
}

TEST(FeatureSet, SampleMatrixLayout) {
  const auto s = tiny_set();
  const auto x = s.sample_matrix(1);
  ASSERT_EQ(x.rows(), 3);
  ASSERT_EQ(x.cols(), 4);
  // sample 1, token 2, channel 1 sits at (1*4 + 2)*3 + 1
  EXPECT_EQ(x(1, 2), static_cast<double>(s.features[(1 * 4 + 2) * 3 + 1]));
}

TEST(Synthetic, DeterministicAndBoxesPerSample) {
  SynthSpec spec;
  spec.samples_per_class = 5;
  spec.fg_tokens_per_sample = 3;
  const auto a = generate_synthetic(spec);
  EXPECT_EQ(a, generate_synthetic(spec));
  ASSERT_TRUE(a.bboxes);
  for (const auto& boxes : *a.bboxes) {
    EXPECT_EQ(boxes.size(), 3U);
    for (const auto& b : boxes) {
      EXPECT_EQ(b.xmin, b.xmax);
      EXPECT_EQ(b.ymin, b.ymax);
    }
  }
  spec.seed = 8;
  EXPECT_NE(a, generate_synthetic(spec));
}

TEST(Synthetic, ZeroNoiseForegroundIsClassMean) {
  SynthSpec spec;
  spec.classes = 4;
  spec.samples_per_class = 3;
  spec.noise_std = 1e-300;
  const auto set = generate_synthetic(spec);
  const auto means = synthetic_class_means(spec);
  for (std::size_t s = 0; s < set.samples; ++s) {
    const auto x = set.sample_matrix(s);
    for (const auto& b : (*set.bboxes)[s]) {
      const auto t = b.ymin * set.grid_w + b.xmin;
      const Eigen::VectorXd mu = means.row(set.labels[s]).transpose().cast<float>().cast<double>();
      EXPECT_EQ((x.col(t) - mu).cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(Synthetic, ClassMeansSeparatedWithRequestedNorm) {
  SynthSpec spec;
  const auto means = synthetic_class_means(spec);
  for (Eigen::Index i = 0; i < means.rows(); ++i) {
    EXPECT_NEAR(means.row(i).norm(), spec.fg_mean_scale, 1e-12);
    for (Eigen::Index j = 0; j < i; ++j) EXPECT_NEAR(means.row(i).dot(means.row(j)), 0.0, 1e-9);
  }
}

TEST(Synthetic, Validation) {
  SynthSpec spec;
  spec.fg_tokens_per_sample = 100;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = SynthSpec{};
  spec.noise_std = 0.0;
  EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(Subset, StratifiedExamples) {
  SynthSpec spec;
  spec.classes = 10;
  spec.samples_per_class = 10;
  const auto set = generate_synthetic(spec);
  const auto idx = stratified_subset(set, 0.1, 1);
  ASSERT_EQ(idx.size(), 10U);
  std::set<std::uint32_t> classes;
  for (auto i : idx) classes.insert(set.labels[i]);
  EXPECT_EQ(classes.size(), 10U);
  EXPECT_EQ(stratified_subset(set, 1.0, 1).size(), 100U);
  EXPECT_EQ(idx, stratified_subset(set, 0.1, 1));
  EXPECT_THROW(stratified_subset(set, 0.0, 1), ValidationError);
  EXPECT_THROW(stratified_subset(set, 1.5, 1), ValidationError);
}

TEST(Subset, CeilingRule) {
  SynthSpec spec;
  spec.classes = 2;
  spec.samples_per_class = 3;
  const auto set = generate_synthetic(spec);
  const auto idx = stratified_subset(set, 0.5, 4);
  EXPECT_EQ(std::count_if(idx.begin(), idx.end(), [&](auto i) { return set.labels[i] == 0; }), 2);
}

TEST(Batches, PartitionAndDeterminism) {
  std::vector<std::size_t> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  const auto b = epoch_batches(idx, 4, std::nullopt, 0);
  ASSERT_EQ(b.size(), 3U);
  EXPECT_EQ(b[0].size(), 4U);
  EXPECT_EQ(b[2].size(), 2U);

  const auto s1 = epoch_batches(idx, 4, 99, 3);
  EXPECT_EQ(s1, epoch_batches(idx, 4, 99, 3));
  std::multiset<std::size_t> seen;
  for (const auto& batch : s1) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen, std::multiset<std::size_t>(idx.begin(), idx.end()));
  EXPECT_NE(s1, epoch_batches(idx, 4, 99, 4));

  const std::vector<std::size_t> three{5, 6, 7};
  EXPECT_EQ(epoch_batches(three, 1, std::nullopt, 0).size(), 3U);
  EXPECT_THROW(epoch_batches(std::vector<std::size_t>{}, 2, std::nullopt, 0), ValidationError);
}

TEST(Manifest, RoundTripAndValidation) {
  SplitManifest m;
  m.train_file = "a.fprb";
  m.val_file = "b.fprb";
  m.train_indices = std::vector<std::size_t>{0, 2, 4};
  m.fraction = 0.5;
  m.seed = 3;
  const auto parsed = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(parsed.train_indices, m.train_indices);
  EXPECT_EQ(parsed.fraction, m.fraction);
  EXPECT_NO_THROW(m.validate(5, 5));
  EXPECT_THROW(m.validate(4, 5), ValidationError);
  m.train_indices = std::vector<std::size_t>{1, 1};
  EXPECT_THROW(m.validate(5, 5), ValidationError);
  EXPECT_THROW(manifest_from_json("{"), FormatError);
}

TEST(Rng, DerivedSeedsDifferByLabel) {
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(std::abs(truncated_normal(rng, 0.02)), 0.04);
}
