#pragma once

#include <cstddef>
#include <vector>

#include "bt/nn/network.hpp"
#include "bt/tensor.hpp"

namespace bt::nn {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct OptimState {
    AdamConfig config;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
    float lr = 1e-3f;  // current rate after schedule

    static OptimState for_params(const std::vector<Parameter>& params, const AdamConfig& config);
    void validate(const std::vector<Parameter>& params) const;
    friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// One bias-corrected Adam update with the state's current rate. Empty
/// gradient tensors leave the parameter untouched.
void adam_step(std::vector<Parameter>& params, const std::vector<Tensor>& grads, OptimState& state);

/// Epoch milestones as fractions of the run; defaults put them at 50% and 75%.
struct StepDecay {
    std::vector<double> milestones{0.5, 0.75};
    float factor = 0.1f;
};

/// base * factor^(number of milestones m with epoch >= round(m * epochs)).
float step_decay_lr(float base, std::size_t epoch, std::size_t epochs, const StepDecay& schedule);

}  // namespace bt::nn
