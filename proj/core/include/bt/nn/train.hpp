#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bt/data/augment.hpp"
#include "bt/nn/network.hpp"
#include "bt/nn/optim.hpp"
#include "bt/quantizer.hpp"
#include "bt/regularization.hpp"

namespace bt::nn {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    AdamConfig adam;
    StepDecay schedule;
    std::uint64_t seed = 0;  // shuffling; the network is seeded separately
    QuantScheme scheme;
    TransitionRegConfig reg;
    data::AugmentPolicy augment;
    float ste_clip = 1.0f;
    bool shuffle = true;
    // Stop once this many epochs are complete (0 runs all); the schedule still
    // spans `epochs`.
    std::size_t stop_after = 0;

    void validate() const;
};

/// Classification uses `labels`; SR and denoising use `targets`.
struct TrainData {
    Tensor inputs;
    std::vector<std::int32_t> labels;
    Tensor targets;

    std::size_t size() const noexcept { return inputs.empty() ? 0 : inputs.dim(0); }
    void validate(Task task) const;
};

struct LayerQuantStats {
    std::string name;
    double mse = 0.0;
    double mean_distance_to_transition = 0.0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    float lr = 0.0f;
    double train_loss = 0.0;    // task loss, mean over batches
    double train_metric = 0.0;  // accuracy in [0,1] or PSNR (dB)
    double penalty = 0.0;       // summed transition penalty, mean over batches
    bool has_val = false;
    double val_loss = 0.0;
    double val_metric = 0.0;
    // Element-weighted mean over quantized layers; 0 for Full.
    double mean_distance_to_transition = 0.0;
    std::vector<LayerQuantStats> layers;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    OptimState optim;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Runs `config.epochs` epochs of Adam with step-decayed rate, evaluating
/// `val` (if given) through the packed inference path after each epoch.
/// Throws DivergenceError on a non-finite loss or activation.
TrainResult train(Network& net, const TrainData& data, const TrainData* val,
                  const TrainConfig& config, const EpochCallback& on_epoch = {},
                  OptimState* resume = nullptr, std::size_t start_epoch = 0);

struct EvalResult {
    double loss = 0.0;
    double metric = 0.0;  // top-1 accuracy or mean per-sample PSNR
};

/// Packed-kernel evaluation of a frozen model.
EvalResult evaluate(const InferenceModel& model, const TrainData& data, std::size_t batch_size = 256);

/// Mean Y PSNR over whole images: each [1, H, W] target in [0, 1] is cropped
/// to a multiple of `scale`, bicubic downscaled, restored by `model`, and
/// compared with `scale` border pixels shaved.
double evaluate_sr_images(const InferenceModel& model, const std::vector<Tensor>& images, std::size_t scale);

/// Mean PSNR of the model's output on clip(Y + N(0, sigma^2)) against Y.
/// `noisy_psnr`, if given, receives the mean PSNR of the noisy inputs.
double evaluate_denoise_images(const InferenceModel& model, const std::vector<Tensor>& images, float sigma,
                               Rng& rng, double* noisy_psnr = nullptr);

/// Quantization diagnostics of every quantized layer under `scheme`.
std::vector<LayerQuantStats> layer_quant_stats(const Network& net, const QuantScheme& scheme);

/// Rows [begin, end) of a batch-major tensor.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

}  // namespace bt::nn
