#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace probekit::autodiff {

using Matrix = Eigen::MatrixXd;

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  [[nodiscard]] bool valid() const { return id != kNone; }
};

/// Reverse-mode tape over dense double matrices. Every op stores its value
/// eagerly and, when recording, a closure that pushes the output gradient
/// back to its inputs. Column vectors are n x 1 matrices.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Matrix value);
  /// A differentiable leaf. Gradients of every leaf sharing `slot` are summed.
  Var parameter(const Matrix& value, std::size_t slot);

  [[nodiscard]] const Matrix& value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// a (R x C) plus column vector v (R x 1) broadcast over columns.
  Var add_colwise(Var a, Var v);
  Var scale(Var a, double s);
  Var transpose(Var a);
  Var rows(Var a, Eigen::Index start, Eigen::Index count);
  Var cols(Var a, Eigen::Index start, Eigen::Index count);
  Var concat_rows(std::span<const Var> parts);
  /// Mean over columns: R x C -> R x 1.
  Var mean_cols(Var a);

  Var relu(Var a);
  Var gelu(Var a);
  Var softplus(Var a);
  Var softmax_rows(Var a);
  /// Normalizes every column over its rows, then applies the optional
  /// per-row affine (gamma, beta are R x 1).
  Var layer_norm_cols(Var a, std::optional<Var> gamma, std::optional<Var> beta, double eps);

  /// -log softmax(logits)[label] for a C x 1 logit vector; returns 1 x 1.
  Var cross_entropy(Var logits, std::size_t label);
  /// Mean cosine similarity over unordered pairs of distinct rows; 0 when
  /// there are fewer than two rows. Returns 1 x 1.
  Var mean_pairwise_row_cosine(Var a);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(Var loss);

  /// Summed gradient of all leaves registered under `slot`, or nullopt if
  /// the slot was never registered or received no gradient.
  [[nodiscard]] std::optional<Matrix> slot_grad(std::size_t slot) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, const Matrix&)> back;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, const Matrix&)> back = {});
  [[nodiscard]] bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  void accumulate(Var v, const Matrix& g);

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, std::size_t>> leaves_;  // (slot, node id)
};

namespace kernels {

Matrix softmax_rows(const Matrix& logits);
Matrix softplus(const Matrix& x);
double gelu(double x);
double gelu_grad(double x);

}  // namespace kernels

}  // namespace probekit::autodiff
