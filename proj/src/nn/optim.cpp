#include "pinas/nn/optim.hpp"

#include "pinas/error.hpp"

#include <cmath>
#include <numbers>

namespace pinas::nn {

void sgd_step(ParameterStore& params, const GradStore& grads, SgdState& state) {
    if (state.lr < 0.0 || state.momentum < 0.0 || state.momentum >= 1.0 || state.weight_decay < 0.0)
        throw ConfigError("invalid SGD hyperparameters");
    for (const auto& [name, g] : grads) {
        const auto& entry = params.entry(name);
        if (entry.kind != EntryKind::param) throw ContractError("gradient supplied for buffer '" + name + "'");
        if (entry.value.shape() != g.shape())
            throw ContractError("gradient shape " + shape_str(g.shape()) + " does not match parameter '" + name +
                                "' " + shape_str(entry.value.shape()));
    }
    const auto mom = static_cast<float>(state.momentum);
    const auto wd = static_cast<float>(state.weight_decay);
    const auto lr = static_cast<float>(state.lr);
    for (const auto& [name, g] : grads) {
        Tensor& w = params.mut(name);
        auto it = state.momentum_buffers.find(name);
        if (it == state.momentum_buffers.end()) it = state.momentum_buffers.emplace(name, Tensor(w.shape())).first;
        Tensor& v = it->second;
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mom * v[i] + (g[i] + wd * w[i]);
            w[i] -= lr * v[i];
        }
    }
}

double cosine_lr(long step, long total_steps, double base_lr) {
    if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) throw ContractError("cosine_lr: step outside [0, total_steps]");
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
}

double step_decay_lr(int epoch, int total_epochs, double base_lr, const std::vector<double>& milestones,
                     double gamma) {
    double lr = base_lr;
    for (double m : milestones)
        if (epoch >= static_cast<int>(std::lround(m * total_epochs))) lr *= gamma;
    return lr;
}

}  // namespace pinas::nn
