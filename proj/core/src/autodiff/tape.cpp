#include "probekit/autodiff/tape.hpp"

#include <cmath>
#include <numbers>

namespace probekit::autodiff {

namespace kernels {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix softplus(const Matrix& x) {
  // ln(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  return x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace kernels

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, const Matrix&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  auto& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::parameter(const Matrix& value, std::size_t slot) {
  const Var v = push(value, true, [](Tape&, const Matrix&) {});
  if (record_) leaves_.emplace_back(slot, v.id);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  return push(value(a) * value(b), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var Tape::add(Var a, Var b) {
  return push(value(a) + value(b), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::add_colwise(Var a, Var v) {
  Matrix out = value(a);
  out.colwise() += value(v).col(0);
  return push(std::move(out), needs(a) || needs(v), [a, v](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs(v)) t.accumulate(v, g.rowwise().sum());
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, needs(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var Tape::transpose(Var a) {
  return push(value(a).transpose(), needs(a),
              [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var Tape::rows(Var a, Eigen::Index start, Eigen::Index count) {
  const auto r = value(a).rows();
  const auto c = value(a).cols();
  return push(value(a).middleRows(start, count), needs(a),
              [a, start, count, r, c](Tape& t, const Matrix& g) {
                Matrix full = Matrix::Zero(r, c);
                full.middleRows(start, count) = g;
                t.accumulate(a, full);
              });
}

Var Tape::cols(Var a, Eigen::Index start, Eigen::Index count) {
  const auto r = value(a).rows();
  const auto c = value(a).cols();
  return push(value(a).middleCols(start, count), needs(a),
              [a, start, count, r, c](Tape& t, const Matrix& g) {
                Matrix full = Matrix::Zero(r, c);
                full.middleCols(start, count) = g;
                t.accumulate(a, full);
              });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  Eigen::Index total = 0;
  const Eigen::Index c = value(parts.front()).cols();
  bool any = false;
  for (auto p : parts) {
    total += value(p).rows();
    any = any || needs(p);
  }
  Matrix out(total, c);
  Eigen::Index at = 0;
  for (auto p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return push(std::move(out), any, [ins](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (auto p : ins) {
      const auto n = t.value(p).rows();
      if (t.needs(p)) t.accumulate(p, g.middleRows(off, n));
      off += n;
    }
  });
}

Var Tape::mean_cols(Var a) {
  const auto n = value(a).cols();
  return push(value(a).rowwise().mean(), needs(a), [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, g.col(0).replicate(1, n) / static_cast<double>(n));
  });
}

Var Tape::relu(Var a) {
  return push(value(a).cwiseMax(0.0), needs(a), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (t.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

Var Tape::gelu(Var a) {
  return push(value(a).unaryExpr([](double x) { return kernels::gelu(x); }), needs(a),
              [a](Tape& t, const Matrix& g) {
                t.accumulate(a, t.value(a)
                                    .unaryExpr([](double x) { return kernels::gelu_grad(x); })
                                    .cwiseProduct(g));
              });
}

Var Tape::softplus(Var a) {
  return push(kernels::softplus(value(a)), needs(a), [a](Tape& t, const Matrix& g) {
    const Matrix sig =
        t.value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.accumulate(a, sig.cwiseProduct(g));
  });
}

Var Tape::softmax_rows(Var a) {
  const Var out = push(kernels::softmax_rows(value(a)), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [a, out](Tape& t, const Matrix& g) {
      const Matrix& y = t.value(out);
      const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
      Matrix dx = g;
      dx.colwise() -= dots;
      t.accumulate(a, y.cwiseProduct(dx));
    };
  }
  return out;
}

Var Tape::layer_norm_cols(Var a, std::optional<Var> gamma, std::optional<Var> beta, double eps) {
  const Matrix& x = value(a);
  const auto d = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Matrix centered = x.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / d;
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out = xhat;
  if (gamma) out = out.array().colwise() * value(*gamma).col(0).array();
  if (beta) out.colwise() += value(*beta).col(0);

  const bool any = needs(a) || (gamma && needs(*gamma)) || (beta && needs(*beta));
  return push(std::move(out), any,
              [a, gamma, beta, xhat = std::move(xhat), inv_std, d](Tape& t, const Matrix& g) {
                if (gamma && t.needs(*gamma)) {
                  t.accumulate(*gamma, g.cwiseProduct(xhat).rowwise().sum());
                }
                if (beta && t.needs(*beta)) t.accumulate(*beta, g.rowwise().sum());
                if (!t.needs(a)) return;
                Matrix dxhat = g;
                if (gamma) dxhat = dxhat.array().colwise() * t.value(*gamma).col(0).array();
                const Eigen::RowVectorXd mean_g = dxhat.colwise().sum() / d;
                const Eigen::RowVectorXd mean_gx = dxhat.cwiseProduct(xhat).colwise().sum() / d;
                Matrix dx = dxhat.rowwise() - mean_g;
                dx -= (xhat.array().rowwise() * mean_gx.array()).matrix();
                dx = dx.array().rowwise() * inv_std.array();
                t.accumulate(a, dx);
              });
}

Var Tape::cross_entropy(Var logits, std::size_t label) {
  const Eigen::VectorXd z = value(logits).col(0);
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  Matrix loss(1, 1);
  loss(0, 0) = lse - z(static_cast<Eigen::Index>(label));
  return push(std::move(loss), needs(logits), [logits, label, lse](Tape& t, const Matrix& g) {
    Matrix p = (t.value(logits).array() - lse).exp().matrix();
    p(static_cast<Eigen::Index>(label), 0) -= 1.0;
    t.accumulate(logits, p * g(0, 0));
  });
}

Var Tape::mean_pairwise_row_cosine(Var a) {
  const Matrix& x = value(a);
  const auto m = x.rows();
  Matrix out = Matrix::Zero(1, 1);
  if (m < 2) return push(std::move(out), false);

  const Eigen::VectorXd norms = x.rowwise().norm();
  Matrix r = x;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (norms(i) > 0.0) r.row(i) /= norms(i);
  }
  const double pairs = static_cast<double>(m * (m - 1)) / 2.0;
  const Matrix gram = r * r.transpose();
  out(0, 0) = (gram.sum() - gram.trace()) / 2.0 / pairs;

  return push(std::move(out), needs(a), [a, r, norms, pairs](Tape& t, const Matrix& g) {
    const auto rows = r.rows();
    const Eigen::RowVectorXd total = r.colwise().sum();
    Matrix dx = Matrix::Zero(rows, r.cols());
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (norms(i) <= 0.0) continue;
      // d/dr_i of the pair sum is the sum of the other rows.
      const Eigen::RowVectorXd dr = (total - r.row(i)) * (g(0, 0) / pairs);
      dx.row(i) = (dr - dr.dot(r.row(i)) * r.row(i)) / norms(i);
    }
    t.accumulate(a, dx);
  });
}

void Tape::backward(Var loss) {
  if (!record_) return;
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

std::optional<Matrix> Tape::slot_grad(std::size_t slot) const {
  std::optional<Matrix> out;
  for (const auto& [s, id] : leaves_) {
    if (s != slot) continue;
    const auto& n = nodes_[id];
    Matrix g = n.grad.size() == 0 ? Matrix::Zero(n.value.rows(), n.value.cols()) : n.grad;
    if (out) {
      *out += g;
    } else {
      out = std::move(g);
    }
  }
  return out;
}

}  // namespace probekit::autodiff
