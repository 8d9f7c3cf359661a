#include "bt/nn/optim.hpp"

#include <cmath>

#include "bt/error.hpp"

namespace bt::nn {

OptimState OptimState::for_params(const std::vector<Parameter>& params, const AdamConfig& config) {
    OptimState s;
    s.config = config;
    s.lr = config.lr;
    for (const auto& p : params) {
        s.m.emplace_back(p.value.shape());
        s.v.emplace_back(p.value.shape());
    }
    return s;
}

void OptimState::validate(const std::vector<Parameter>& params) const {
    if (m.size() != params.size() || v.size() != params.size())
        throw InvalidInput("optimizer state does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (m[i].shape() != params[i].value.shape() || v[i].shape() != params[i].value.shape())
            throw InvalidInput("optimizer moment shape mismatch for " + params[i].name);
}

void adam_step(std::vector<Parameter>& params, const std::vector<Tensor>& grads, OptimState& state) {
    if (grads.size() != params.size()) throw InvalidInput("adam_step: gradient count mismatch");
    state.validate(params);
    ++state.step;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), t);
    const double step_size = state.lr / bc1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].empty()) continue;
        if (grads[i].shape() != params[i].value.shape())
            throw InvalidInput("adam_step: gradient shape mismatch for " + params[i].name);
        float* w = params[i].value.data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        const float* g = grads[i].data();
        for (std::size_t j = 0; j < grads[i].numel(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0f - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0f - c.beta2) * g[j] * g[j];
            const double denom = std::sqrt(v[j] / bc2) + c.eps;
            w[j] -= static_cast<float>(step_size * m[j] / denom);
        }
    }
}

float step_decay_lr(float base, std::size_t epoch, std::size_t epochs, const StepDecay& schedule) {
    float lr = base;
    for (double m : schedule.milestones) {
        const auto at = static_cast<std::size_t>(std::llround(m * static_cast<double>(epochs)));
        if (epoch >= at) lr *= schedule.factor;
    }
    return lr;
}

}  // namespace bt::nn
