#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "probekit/autodiff/tape.hpp"
#include "support/fixtures.hpp"

using namespace probekit::autodiff;
using probekit::testing::random_matrix;

namespace {

using Builder = std::function<Var(Tape&, Var)>;

/// Gradient of sum(w .* f(x)) against central differences.
double check_op(const Matrix& x0, const Builder& f, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Tape probe(false);
  const Matrix out = probe.value(f(probe, probe.constant(x0)));
  const Matrix w = random_matrix(out.rows(), out.cols(), rng);
  auto loss = [&](const Matrix& x) {
    Tape t(false);
    return (t.value(f(t, t.constant(x))).array() * w.array()).sum();
  };
  // sum(w .* y) is the trace of w^T y, gathered one diagonal entry at a time.
  Tape t;
  const Var y = f(t, t.parameter(x0, 0));
  const Var cross = t.matmul(t.transpose(t.constant(w)), y);
  Var total;
  for (Eigen::Index i = 0; i < w.cols(); ++i) {
    Matrix e = Matrix::Zero(w.cols(), 1);
    e(i) = 1.0;
    const Var term = t.matmul(t.transpose(t.constant(e)), t.matmul(cross, t.constant(e)));
    total = total.valid() ? t.add(total, term) : term;
  }
  t.backward(total);
  const Matrix g = *t.slot_grad(0);
  double worst = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Matrix up = x0;
    Matrix down = x0;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (loss(up) - loss(down)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.data()[i]) / std::max({std::abs(fd), std::abs(g.data()[i]), 1e-6}));
  }
  return worst;
}

}  // namespace

TEST(Tape, ElementwiseAndStructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix other = random_matrix(3, 5, rng);
  const Matrix col = random_matrix(4, 1, rng);
  EXPECT_LT(check_op(x, [&](Tape& t, Var v) { return t.matmul(v, t.constant(other)); }), 1e-6);
  EXPECT_LT(check_op(x, [&](Tape& t, Var v) { return t.add_colwise(v, t.constant(col)); }), 1e-6);
  EXPECT_LT(check_op(col, [&](Tape& t, Var v) { return t.add_colwise(t.constant(x), v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.scale(v, -2.5); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.transpose(v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.rows(v, 1, 2); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.cols(v, 1, 2); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) {
              const Var parts[] = {t.rows(v, 2, 2), v, t.rows(v, 0, 1)};
              return t.concat_rows(parts);
            }),
            1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.mean_cols(v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.relu(v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.gelu(v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.softplus(v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.softmax_rows(v); }), 1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.layer_norm_cols(v, std::nullopt, std::nullopt, 1e-5); }),
            1e-5);
  EXPECT_LT(check_op(col, [&](Tape& t, Var v) {
              return t.layer_norm_cols(t.constant(x), v, t.constant(col), 1e-5);
            }),
            1e-6);
  EXPECT_LT(check_op(x, [](Tape& t, Var v) { return t.mean_pairwise_row_cosine(t.softplus(v)); }), 1e-6);
  EXPECT_LT(check_op(col, [](Tape& t, Var v) { return t.cross_entropy(v, 2); }), 1e-6);
}

TEST(Tape, SharedSlotsAccumulateAndUnusedSlotsAreZero) {
  Tape t;
  const Var a = t.parameter(Matrix::Constant(1, 1, 2.0), 7);
  const Var b = t.parameter(Matrix::Constant(1, 1, 2.0), 7);
  t.parameter(Matrix::Constant(1, 1, 1.0), 8);
  t.backward(t.matmul(a, b));
  EXPECT_DOUBLE_EQ((*t.slot_grad(7))(0, 0), 4.0);
  EXPECT_EQ((*t.slot_grad(8))(0, 0), 0.0);
  EXPECT_FALSE(t.slot_grad(9).has_value());
}

TEST(Tape, StableKernels) {
  Matrix big(1, 2);
  big << 1000, 1000;
  EXPECT_DOUBLE_EQ(kernels::softmax_rows(big)(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(kernels::softplus(Matrix::Constant(1, 1, 800.0))(0, 0), 800.0);
  EXPECT_NEAR(kernels::softplus(Matrix::Zero(1, 1))(0, 0), std::log(2.0), 1e-16);
  EXPECT_NEAR(kernels::gelu(1.0), 0.8413447460685429, 1e-15);
}
