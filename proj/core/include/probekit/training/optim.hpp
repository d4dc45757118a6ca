#pragma once

#include <vector>

#include "probekit/training/probe.hpp"

namespace probekit::training {

inline constexpr double kLarsTrust = 0.001;
inline constexpr double kLarsEps = 1e-9;

/// Momentum buffers, one per probe slot, allocated on first use.
struct OptimizerState {
  std::vector<Matrix> velocity;
};

/// v <- momentum v + g + wd θ;  θ <- θ - lr v.
void sgd_momentum_update(Matrix& theta, const Matrix& grad, Matrix& velocity, double lr,
                         double momentum, double weight_decay);

/// trust ‖θ‖ / (‖g‖ + wd ‖θ‖ + eps) when both norms are positive, else 1.
double lars_local_lr(const Matrix& theta, const Matrix& grad, double weight_decay, double trust_coeff,
                     double eps = kLarsEps);

/// The SGD momentum update with the per-tensor rate lr * lars_local_lr.
void lars_update(Matrix& theta, const Matrix& grad, Matrix& velocity, double lr, double momentum,
                 double weight_decay, double trust_coeff, double eps = kLarsEps);

void sgd_momentum_step(Probe& probe, const Gradients& grads, OptimizerState& state, double lr,
                       double momentum, double weight_decay);

void lars_step(Probe& probe, const Gradients& grads, OptimizerState& state, double lr, double momentum,
               double weight_decay, double trust_coeff = kLarsTrust);

}  // namespace probekit::training
