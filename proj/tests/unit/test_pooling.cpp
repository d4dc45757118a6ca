#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "probekit/common/error.hpp"
#include "probekit/pooling/forward.hpp"
#include "support/fixtures.hpp"

using namespace probekit;
using namespace probekit::pooling;
using probekit::testing::random_matrix;
using probekit::testing::randomize;

namespace {

const Method kZoo[] = {Method::gap,  Method::cls,     Method::mhca,  Method::mhca_lq, Method::mhca_idk,
                       Method::ep,   Method::abmilp,  Method::aim,   Method::delf,    Method::simpool,
                       Method::vjepa, Method::cae,    Method::siglip, Method::coca};

}  // namespace

TEST(PoolConfig, PresetsValidateAndRoundTripThroughJson) {
  for (auto m : kZoo) {
    const auto c = make_config(m, 16, m == Method::coca ? 2 : 4);
    SCOPED_TRACE(std::string(to_string(m)));
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(config_from_json(nlohmann::json::parse(to_json(c).dump())), c);
  }
}

TEST(PoolConfig, StructuralConstraints) {
  auto ep = make_config(Method::ep, 8, 4);
  ep.key_transform = Transform::learned;
  EXPECT_THROW(ep.validate(), ValidationError);

  auto ab = make_config(Method::abmilp, 8, 1);
  ab.heads = 2;
  EXPECT_THROW(ab.validate(), ValidationError);

  auto lq = make_config(Method::mhca_lq, 8, 3);  // 3 does not divide 8
  EXPECT_THROW(lq.validate(), ValidationError);

  EXPECT_THROW(method_from_string("transformer"), ValidationError);
  EXPECT_EQ(method_from_string("EP"), Method::ep);
}

TEST(InitParams, EpHasOnlyQueriesAndValue) {
  auto c = make_config(Method::ep, 8, 4);
  c.value_transform = Transform::identity;
  const auto p = init_params(c, 1);
  ASSERT_TRUE(p.queries);
  EXPECT_EQ(p.queries->rows(), 4);
  EXPECT_EQ(p.queries->cols(), 8);
  int present = 0;
  for (const auto& s : kPoolSlots) present += (p.*(s.member)).has_value();
  EXPECT_EQ(present, 1);
}

TEST(InitParams, AbmilpHasOnlyQueryVectorAndBias) {
  const auto p = init_params(make_config(Method::abmilp, 8, 1), 3);
  ASSERT_TRUE(p.u);
  EXPECT_EQ(p.u->rows(), 8);
  ASSERT_TRUE(p.attn_bias);
  int present = 0;
  for (const auto& s : kPoolSlots) present += (p.*(s.member)).has_value();
  EXPECT_EQ(present, 2);
}

TEST(InitParams, DeterministicAndWithinRanges) {
  const auto c = make_config(Method::mhca, 16, 4);
  const auto a = init_params(c, 42);
  EXPECT_EQ(a, init_params(c, 42));
  EXPECT_NE(a, init_params(c, 43));
  EXPECT_LE(a.u->cwiseAbs().maxCoeff(), 0.04);
  const double bound = std::sqrt(6.0 / 32.0);
  EXPECT_LE(a.w_k->cwiseAbs().maxCoeff(), bound);
  EXPECT_NO_THROW(validate_params(c, a));
}

TEST(InitParams, ValidateRejectsExtraMissingAndMisshaped) {
  const auto c = make_config(Method::ep, 8, 2);
  auto p = init_params(c, 0);
  p.q = Eigen::MatrixXd::Zero(8, 1);
  EXPECT_THROW(validate_params(c, p), ValidationError);
  p = init_params(c, 0);
  p.queries.reset();
  EXPECT_THROW(validate_params(c, p), ValidationError);
  p = init_params(c, 0);
  p.w_v = Eigen::MatrixXd::Zero(3, 3);
  EXPECT_THROW(validate_params(c, p), ValidationError);
  p = init_params(c, 0);
  (*p.queries)(0, 0) = NAN;
  EXPECT_THROW(validate_params(c, p), ValidationError);
}

TEST(PredictLogits, EpStandardBasis) {
  auto c = make_config(Method::ep, 2, 1);
  auto p = init_params(c, 0);
  *p.queries << 1, 0;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(2, 2);
  const auto logits = predict_logits(c, p, x);
  EXPECT_EQ(logits(0, 0), 1.0);
  EXPECT_EQ(logits(0, 1), 0.0);
}

TEST(PredictLogits, LearnedQueryWithIdentityKeyMatchesEp) {
  std::mt19937_64 rng(5);
  auto lq = make_config(Method::mhca_lq, 6, 1);
  auto lp = init_params(lq, 0);
  *lp.w_k = Eigen::MatrixXd::Identity(6, 6);
  *lp.q = random_matrix(6, 1, rng);
  auto ep = make_config(Method::ep, 6, 1);
  auto epp = init_params(ep, 0);
  *epp.queries = lp.q->transpose();
  const auto x = random_matrix(6, 7, rng);
  EXPECT_LE((predict_logits(lq, lp, x) - predict_logits(ep, epp, x)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PredictLogits, IdentityKeyHeadsSeeOnlyTheirChannelSlice) {
  std::mt19937_64 rng(9);
  const auto c = make_config(Method::mhca_idk, 8, 4);
  auto p = init_params(c, 1);
  randomize(p, rng);
  auto x = random_matrix(8, 5, rng);
  const auto before = predict_logits(c, p, x);
  x.middleRows(4, 2) += random_matrix(2, 5, rng);  // channels of head 2
  const auto after = predict_logits(c, p, x);
  for (int j : {0, 1, 3}) EXPECT_EQ((before.row(j) - after.row(j)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT((before.row(2) - after.row(2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PredictLogits, DimensionMismatch) {
  const auto c = make_config(Method::ep, 8, 2);
  EXPECT_THROW(predict_logits(c, init_params(c, 0), Eigen::MatrixXd::Zero(7, 3)), ValidationError);
}

TEST(Normalize, SoftmaxAndSoftplusExamples) {
  const auto u = normalize(Eigen::RowVector3d::Zero(), Normalizer::softmax);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u.values(0, i), 1.0 / 3.0, 1e-15);
  EXPECT_TRUE(u.normalized);

  Eigen::MatrixXd big(1, 2);
  big << 1000, 1000;
  const auto s = normalize(big, Normalizer::softmax);
  EXPECT_DOUBLE_EQ(s.values(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.values(0, 1), 0.5);

  const auto sp = normalize(Eigen::MatrixXd::Zero(1, 1), Normalizer::softplus);
  EXPECT_NEAR(sp.values(0, 0), 0.693147, 1e-6);
  EXPECT_FALSE(sp.normalized);
}

TEST(Pool, MeanPoolingExample) {
  auto c = make_config(Method::ep, 2, 1);
  auto p = init_params(c, 0);
  *p.w_v = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd x(2, 2);
  x << 1, 3, 2, 4;
  AttentionSet a{Eigen::RowVector2d(0.5, 0.5), Eigen::MatrixXd::Zero(1, 2), true};
  const auto y = pool(c, p, x, a).y;
  EXPECT_DOUBLE_EQ(y(0), 2.0);
  EXPECT_DOUBLE_EQ(y(1), 3.0);
}

TEST(Pool, SwapMatrixExample) {
  auto c = make_config(Method::ep, 2, 1);
  auto p = init_params(c, 0);
  *p.w_v << 0, 1, 1, 0;
  Eigen::MatrixXd x(2, 1);
  x << 1, 2;
  AttentionSet a{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1), true};
  const auto y = pool(c, p, x, a).y;
  EXPECT_EQ(y(0), 2.0);
  EXPECT_EQ(y(1), 1.0);
}

TEST(Pool, OneHotSelectsValueColumn) {
  std::mt19937_64 rng(3);
  for (auto m : {Method::ep, Method::mhca_lq}) {
    auto c = make_config(m, 6, 1);
    auto p = init_params(c, 0);
    randomize(p, rng);
    const auto x = random_matrix(6, 4, rng);
    AttentionSet a{Eigen::RowVector4d(0, 0, 1, 0), Eigen::MatrixXd::Zero(1, 4), true};
    const Eigen::VectorXd expected = *p.w_v * x.col(2);
    EXPECT_LE((pool(c, p, x, a).y - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Pool, ShapeMismatch) {
  const auto c = make_config(Method::ep, 4, 2);
  const auto p = init_params(c, 0);
  AttentionSet a{Eigen::MatrixXd::Constant(1, 3, 1.0 / 3), Eigen::MatrixXd::Zero(1, 3), true};
  EXPECT_THROW(pool(c, p, Eigen::MatrixXd::Zero(4, 3), a), ValidationError);
}

TEST(Forward, GapIsColumnMean) {
  std::mt19937_64 rng(1);
  const auto c = make_config(Method::gap, 5, 1);
  const auto x = random_matrix(5, 9, rng);
  const auto r = forward(c, init_params(c, 0), x);
  EXPECT_LE((r.feature.y - x.rowwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, ClsReturnsTokenAndRequiresIt) {
  const auto c = make_config(Method::cls, 3, 1);
  const Eigen::VectorXd cls = Eigen::Vector3d(1, 2, 3);
  EXPECT_EQ(forward(c, init_params(c, 0), Eigen::MatrixXd::Zero(3, 4), &cls).feature.y, cls);
  EXPECT_THROW(forward(c, init_params(c, 0), Eigen::MatrixXd::Zero(3, 4)), ValidationError);
}

TEST(Forward, VjepaZeroMlpIsProjection) {
  std::mt19937_64 rng(2);
  const auto c = make_config(Method::vjepa, 8, 2);
  auto p = init_params(c, 0);
  randomize(p, rng);
  p.w_1->setZero();
  p.b_1->setZero();
  p.w_2->setZero();
  p.b_2->setZero();
  const auto x = random_matrix(8, 6, rng);
  const auto r = forward(c, p, x);
  const auto a = normalize(predict_logits(c, p, x), Normalizer::softmax);
  const Eigen::VectorXd projected = *p.w_p * pool(c, p, x, a).y + p.b_p->col(0);
  EXPECT_LE((r.feature.y - projected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Forward, AbmilpBitIdenticalToSingleQueryEp) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ab = make_config(Method::abmilp, 7, 1);
    auto abp = init_params(ab, trial);
    randomize(abp, rng);
    auto ep = make_config(Method::ep, 7, 1);
    ep.value_transform = Transform::identity;
    ep.bias.attn = true;
    auto epp = init_params(ep, trial);
    *epp.queries = abp.u->transpose();
    *epp.attn_bias = *abp.attn_bias;
    const auto x = random_matrix(7, 10, rng);
    const auto a = forward(ab, abp, x);
    const auto b = forward(ep, epp, x);
    EXPECT_TRUE(a.feature.y == b.feature.y);
    EXPECT_TRUE(a.attention.values == b.attention.values);
  }
}

TEST(Forward, DelfSoftplusUnnormalized) {
  std::mt19937_64 rng(4);
  const auto c = make_config(Method::delf, 6, 1);
  auto p = init_params(c, 0);
  randomize(p, rng);
  const auto r = forward(c, p, random_matrix(6, 5, rng));
  EXPECT_FALSE(r.attention.normalized);
  EXPECT_GT(r.attention.values.minCoeff(), 0.0);
}

TEST(Forward, SoftmaxRowsSumToOneForEveryAttentionMethod) {
  std::mt19937_64 rng(8);
  for (auto m : kZoo) {
    if (m == Method::cls || m == Method::gap || m == Method::delf) continue;
    SCOPED_TRACE(std::string(to_string(m)));
    const std::uint32_t heads = (m == Method::abmilp || m == Method::simpool) ? 1 : 2;
    const auto c = make_config(m, 8, heads);
    auto p = init_params(c, 0);
    randomize(p, rng);
    const auto r = forward(c, p, random_matrix(8, 6, rng));
    EXPECT_EQ(r.attention.values.rows(), heads);
    EXPECT_GE(r.attention.values.minCoeff(), 0.0);
    EXPECT_LE((r.attention.values.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_EQ(r.feature.y.size(), c.feature_dim());
  }
}

TEST(Forward, TokenPermutationPermutesAttentionAndKeepsOutput) {
  std::mt19937_64 rng(6);
  for (auto m : {Method::ep, Method::mhca, Method::aim, Method::simpool, Method::siglip}) {
    SCOPED_TRACE(std::string(to_string(m)));
    const auto c = make_config(m, 8, m == Method::simpool ? 1 : 2);
    auto p = init_params(c, 0);
    randomize(p, rng);
    const auto x = random_matrix(8, 5, rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
    perm.indices() << 3, 0, 4, 1, 2;
    const Eigen::MatrixXd xp = x * perm;
    const auto a = forward(c, p, x);
    const auto b = forward(c, p, xp);
    EXPECT_LE((a.attention.values * perm - b.attention.values).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LE((a.feature.y - b.feature.y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, UniformAttentionGivesValueOfMean) {
  std::mt19937_64 rng(12);
  const auto c = make_config(Method::ep, 8, 2);
  auto p = init_params(c, 0);
  randomize(p, rng);
  p.queries->setZero();
  const auto x = random_matrix(8, 6, rng);
  const Eigen::VectorXd expected = *p.w_v * x.rowwise().mean();
  EXPECT_LE((forward(c, p, x).feature.y - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Forward, UniformRowReplacement) {
  std::mt19937_64 rng(13);
  const auto c = make_config(Method::ep, 8, 4);
  auto p = init_params(c, 0);
  randomize(p, rng);
  const auto x = random_matrix(8, 5, rng);
  ForwardOptions o;
  o.uniform_row = 2;
  const auto base = forward(c, p, x);
  const auto r = forward(c, p, x, nullptr, o);
  EXPECT_LE((r.attention.values.row(2).array() - 0.2).abs().maxCoeff(), 1e-15);
  for (int j : {0, 1, 3}) EXPECT_TRUE(r.attention.values.row(j) == base.attention.values.row(j));
  o.uniform_row = 4;
  EXPECT_THROW(forward(c, p, x, nullptr, o), ValidationError);
}

TEST(Forward, BatchnormUsesRunningStatsUnlessBatchStatsGiven) {
  std::mt19937_64 rng(14);
  const auto c = make_config(Method::aim, 4, 2);
  auto p = init_params(c, 0);
  *p.bn_mean << 1, 2, 3, 4;
  *p.bn_var << 4, 4, 4, 4;
  const auto x = random_matrix(4, 3, rng);
  Eigen::MatrixXd expected = x;
  expected.colwise() -= p.bn_mean->col(0);
  expected /= std::sqrt(4.0 + kNormEps);
  EXPECT_LE((normalize_input(c, p, x) - expected).cwiseAbs().maxCoeff(), 1e-15);

  const Eigen::MatrixXd* xs[] = {&x};
  const auto stats = batch_norm_stats(xs);
  ForwardOptions o;
  o.batch_stats = &stats;
  const auto xn = normalize_input(c, p, x, o);
  EXPECT_LE(xn.rowwise().mean().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Convert, UnitKeyGivesQueryRow) {
  auto c = make_config(Method::mhca_lq, 5, 1);
  auto p = init_params(c, 0);
  *p.w_k = Eigen::MatrixXd::Identity(5, 5);
  const auto e = mhca_to_mqca(c, p);
  EXPECT_EQ(e.config.method, Method::ep);
  EXPECT_TRUE(e.params.queries->transpose() == *p.q);
  EXPECT_NO_THROW(validate_params(e.config, e.params));
}

TEST(Convert, PreservesForwardOutputs) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = make_config(Method::mhca_lq, 16, 4);
    auto p = init_params(c, trial);
    randomize(p, rng);
    const auto e = mhca_to_mqca(c, p);
    const auto x = random_matrix(16, 9, rng);
    const auto a = forward(c, p, x);
    const auto b = forward(e.config, e.params, x);
    EXPECT_LE((a.attention.logits - b.attention.logits).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.feature.y - b.feature.y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Convert, KeyBiasFoldsIntoAttentionBiasAndMhcaConverts) {
  std::mt19937_64 rng(16);
  auto c = make_config(Method::mhca, 8, 2);
  c.bias.key = true;
  c.bias.query = true;
  c.bias.value = true;
  auto p = init_params(c, 0);
  randomize(p, rng);
  const auto e = mhca_to_mqca(c, p);
  ASSERT_TRUE(e.params.attn_bias);
  const auto x = random_matrix(8, 6, rng);
  EXPECT_LE((forward(c, p, x).feature.y - forward(e.config, e.params, x).feature.y).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Convert, MissingTensorsRejected) {
  const auto c = make_config(Method::mhca_lq, 8, 2);
  auto p = init_params(c, 0);
  p.w_k.reset();
  EXPECT_THROW(mhca_to_mqca(c, p), ValidationError);
  const auto ep = make_config(Method::ep, 8, 2);
  EXPECT_THROW(mhca_to_mqca(ep, init_params(ep, 0)), ValidationError);
}

TEST(Mixing, Examples) {
  std::mt19937_64 rng(17);
  const Eigen::MatrixXd a = normalize(random_matrix(3, 6, rng), Normalizer::softmax).values;
  const auto avg = mix_attention(a, Eigen::MatrixXd::Zero(1, 3));
  EXPECT_LE((avg.row(0) - a.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);

  const Eigen::MatrixXd diag = Eigen::MatrixXd::Identity(3, 3) * 100.0;
  EXPECT_LE((mix_attention(a, diag) - a).cwiseAbs().maxCoeff(), 1e-6);

  const auto mixed = mix_attention(a, random_matrix(2, 3, rng));
  EXPECT_LE((mixed.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_THROW(mix_attention(a, Eigen::MatrixXd::Zero(0, 3)), ValidationError);
}

TEST(Mixing, ForwardPoolsWithMixedMaps) {
  std::mt19937_64 rng(18);
  auto c = make_config(Method::ep, 8, 4);
  c.mixing = 2;
  auto p = init_params(c, 0);
  randomize(p, rng);
  const auto r = forward(c, p, random_matrix(8, 5, rng));
  EXPECT_EQ(r.attention.values.rows(), 2);
  EXPECT_EQ(r.predictor_attention.rows(), 4);
  EXPECT_LE((r.attention.values - mix_attention(r.predictor_attention, *p.mix)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, SingleTokenDegenerate) {
  std::mt19937_64 rng(19);
  const auto c = make_config(Method::ep, 4, 2);
  auto p = init_params(c, 0);
  randomize(p, rng);
  const auto x = random_matrix(4, 1, rng);
  const auto r = forward(c, p, x);
  EXPECT_TRUE((r.attention.values.array() == 1.0).all());
  EXPECT_LE((r.feature.y - *p.w_v * x).cwiseAbs().maxCoeff(), 1e-15);
}
