#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bt/tensor.hpp"

namespace bt::nn {

enum class LayerKind : std::uint8_t {
    Conv3x3,
    FullyConnected,
    MaxPool2,
    BatchNorm,
    ReLU,
    SubPixel,
    Softmax,
};

struct LayerSpec {
    LayerKind kind;
    // Filters for Conv3x3, units for FullyConnected, upscale factor for SubPixel.
    std::size_t width = 0;
    bool quantized = false;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Adds activation `from` into activation `to`. Activation i is the input of
/// layer i; activation layers.size() is the network output. A skip from the
/// network input may upsample it (bicubic) to the target resolution.
struct SkipConnection {
    std::size_t from;
    std::size_t to;

    friend bool operator==(const SkipConnection&, const SkipConnection&) = default;
};

enum class Task : std::uint8_t { Classification, SuperResolution, Denoise };

std::string_view task_name(Task task) noexcept;
Task parse_task(std::string_view name);
std::string_view layer_kind_name(LayerKind kind) noexcept;

struct NetSpec {
    std::vector<LayerSpec> layers;
    std::vector<SkipConnection> skips;
    Task task = Task::Classification;
    Shape input_shape;  // [C, H, W] of one sample

    /// Per-sample shapes of every activation; throws InvalidInput if the
    /// chain does not conform.
    std::vector<Shape> activation_shapes() const;
    void validate() const { (void)activation_shapes(); }

    friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

/// 2x(K-C3) + MP2 + 2x(2K-C3) + MP2 + 2x(4K-C3) + MP2 + 8K-FC + classifier +
/// Softmax, with BatchNorm and ReLU after every convolution. Fully connected
/// layers stay full precision.
NetSpec build_vgg6(std::size_t k, Shape input_shape = {1, 28, 28}, std::size_t classes = 10);

/// Fully convolutional restoration net on one channel: five 64-wide 3x3
/// convs, SubPixel upsampling for SR, a final 1-filter conv, and a residual
/// skip from the input. First and last convs stay full precision.
/// scale 1 builds the denoising variant (no SubPixel).
NetSpec build_espcn(std::size_t scale, Task task, Shape input_shape = {1, 32, 32});

std::string netspec_to_json(const NetSpec& spec);
NetSpec netspec_from_json(std::string_view text);

}  // namespace bt::nn
