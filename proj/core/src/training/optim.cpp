#include "probekit/training/optim.hpp"

#include "probekit/common/error.hpp"

namespace probekit::training {

namespace {

template <typename Update>
void step_all(Probe& probe, const Gradients& grads, OptimizerState& state, Update&& update) {
  if (grads.slots.size() != probe.slot_count())
    throw ValidationError("gradient slots do not match the probe");
  state.velocity.resize(probe.slot_count());
  for (std::size_t slot = 0; slot < probe.slot_count(); ++slot) {
    Matrix* theta = probe.tensor(slot);
    if (theta == nullptr) continue;
    const Matrix& g = grads.slots[slot];
    if (g.rows() != theta->rows() || g.cols() != theta->cols())
      throw ValidationError("gradient shape mismatch for " + probe.slot_name(slot));
    Matrix& v = state.velocity[slot];
    if (v.size() == 0) v = Matrix::Zero(theta->rows(), theta->cols());
    update(*theta, g, v);
  }
}

}  // namespace

void sgd_momentum_update(Matrix& theta, const Matrix& grad, Matrix& velocity, double lr,
                         double momentum, double weight_decay) {
  velocity = momentum * velocity + grad + weight_decay * theta;
  theta -= lr * velocity;
}

double lars_local_lr(const Matrix& theta, const Matrix& grad, double weight_decay, double trust_coeff,
                     double eps) {
  const double wn = theta.norm();
  const double gn = grad.norm();
  if (wn > 0.0 && gn > 0.0) return trust_coeff * wn / (gn + weight_decay * wn + eps);
  return 1.0;
}

void lars_update(Matrix& theta, const Matrix& grad, Matrix& velocity, double lr, double momentum,
                 double weight_decay, double trust_coeff, double eps) {
  const double local = lars_local_lr(theta, grad, weight_decay, trust_coeff, eps);
  sgd_momentum_update(theta, grad, velocity, lr * local, momentum, weight_decay);
}

void sgd_momentum_step(Probe& probe, const Gradients& grads, OptimizerState& state, double lr,
                       double momentum, double weight_decay) {
  step_all(probe, grads, state, [&](Matrix& theta, const Matrix& g, Matrix& v) {
    sgd_momentum_update(theta, g, v, lr, momentum, weight_decay);
  });
}

void lars_step(Probe& probe, const Gradients& grads, OptimizerState& state, double lr, double momentum,
               double weight_decay, double trust_coeff) {
  step_all(probe, grads, state, [&](Matrix& theta, const Matrix& g, Matrix& v) {
    lars_update(theta, g, v, lr, momentum, weight_decay, trust_coeff);
  });
}

}  // namespace probekit::training
