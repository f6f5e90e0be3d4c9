#pragma once

#include "pinas/params.hpp"

#include <vector>

namespace pinas::nn {

struct SgdState {
    GradStore momentum_buffers;
    double lr = 0.03;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

// For every parameter named in `grads`:
//   v <- momentum * v + (g + weight_decay * w)
//   w <- w - lr * v
// Parameters absent from `grads` are left untouched (including their buffers).
void sgd_step(ParameterStore& params, const GradStore& grads, SgdState& state);

// 0.5 * base_lr * (1 + cos(pi * step / total_steps))
double cosine_lr(long step, long total_steps, double base_lr);

// base_lr * gamma^(number of milestones passed); milestones are fractions of
// total_epochs (e.g. {0.6, 0.8}).
double step_decay_lr(int epoch, int total_epochs, double base_lr, const std::vector<double>& milestones,
                     double gamma = 0.1);

}  // namespace pinas::nn
