#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "bt/nn/netspec.hpp"
#include "bt/nn/ops.hpp"
#include "bt/packing.hpp"
#include "bt/quantizer.hpp"
#include "bt/regularization.hpp"
#include "bt/tensor.hpp"

namespace bt::nn {

struct Parameter {
    std::string name;
    Tensor value;
    std::size_t layer = 0;
    bool quantized = false;  // latent full-precision weight of a quantized layer
};

/// Parameter and buffer indices of one layer; -1 when absent.
struct LayerSlots {
    int weight = -1;
    int bias = -1;
    int gamma = -1;
    int beta = -1;
    int running_mean = -1;  // buffer index
    int running_var = -1;   // buffer index
};

/// Parameter/buffer layout implied by a spec, with the shape of each entry.
struct ParamLayout {
    std::vector<LayerSlots> slots;
    std::vector<Parameter> params;  // values hold zero tensors of the right shape
    std::vector<Tensor> buffers;
};
ParamLayout layout_params(const NetSpec& spec);

class Network {
public:
    Network() = default;
    /// Kaiming fan-in initialisation of conv/FC weights from `seed`.
    Network(NetSpec spec, std::uint64_t seed);

    const NetSpec& spec() const noexcept { return spec_; }
    const std::vector<LayerSlots>& slots() const noexcept { return slots_; }
    std::vector<Parameter>& params() noexcept { return params_; }
    const std::vector<Parameter>& params() const noexcept { return params_; }
    std::vector<Tensor>& buffers() noexcept { return buffers_; }
    const std::vector<Tensor>& buffers() const noexcept { return buffers_; }
    std::size_t parameter_count() const noexcept;

    /// Replaces parameters/buffers; shapes must match the layout.
    void assign(std::vector<Parameter> params, std::vector<Tensor> buffers);

private:
    NetSpec spec_;
    std::vector<LayerSlots> slots_;
    std::vector<Parameter> params_;
    std::vector<Tensor> buffers_;
};

enum class Mode { Train, Eval };

struct ForwardOptions {
    // Stop before a trailing Softmax so losses can fuse it.
    bool logits_only = false;
    bool update_running_stats = true;
};

/// Everything backward_ste needs from a train-mode forward pass.
struct ForwardCache {
    bool valid = false;
    bool logits_only = false;
    QuantScheme scheme;
    std::vector<Tensor> activations;                   // a_0 .. a_L
    std::vector<Tensor> effective_weights;             // per param; empty if used as-is
    std::vector<QuantTensor> quantized;                // per param; empty if unquantized
    std::vector<BatchNormCache> batchnorm;             // per layer
    std::vector<std::vector<std::uint32_t>> argmax;    // per layer
};

/// Train mode runs quantized layers on dequantize(quantize(W)) refreshed on
/// every call and uses batch statistics. Eval mode packs quantized weights
/// and runs the multiplication-free kernels with running statistics.
Tensor forward(Network& net, const Tensor& input, const QuantScheme& scheme, Mode mode,
               ForwardCache* cache = nullptr, const ForwardOptions& options = {});

/// Gradients w.r.t. every parameter (latent weights for quantized layers).
/// The quantizer passes gradients straight through where
/// |W| <= ste_clip * alpha1 of the weight's scale group and blocks them elsewhere.
std::vector<Tensor> backward_ste(const Network& net, const ForwardCache& cache,
                                 const Tensor& output_grad, float ste_clip = 1.0f);

/// 1 where the straight-through estimator passes a gradient, 0 elsewhere.
std::vector<std::uint8_t> ste_window(const Tensor& latent, const QuantTensor& q, float ste_clip);

struct RegularizedLoss {
    double loss = 0.0;
    double penalty = 0.0;  // sum of per-layer transition penalties
    std::vector<Tensor> grads;  // surrogate gradient per param; empty if none
};

/// task_loss - lambda * sum over quantized layers of transition_penalty.
/// Each quantized weight gets the surrogate gradient lambda * sign(q(W) - q(W~)) / n
/// inside its STE window, which moves flipped weights toward their transition.
RegularizedLoss loss_with_regularization(double task_loss, const Network& net,
                                         const QuantScheme& scheme,
                                         const TransitionRegConfig& reg, Rng& rng,
                                         float ste_clip = 1.0f);

/// Frozen inference weights: quantized layers hold packed planes (or their
/// dequantized dense form when `packed` is false), the rest dense floats.
class InferenceModel {
public:
    using Weight = std::variant<Tensor, PackedQuantTensor>;

    InferenceModel() = default;
    static InferenceModel from_network(const Network& net, const QuantScheme& scheme,
                                       bool packed = true);

    const NetSpec& spec() const noexcept { return spec_; }
    const QuantScheme& scheme() const noexcept { return scheme_; }
    const std::vector<Weight>& weights() const noexcept { return weights_; }
    const std::vector<std::string>& names() const noexcept { return names_; }

    Tensor forward(const Tensor& input, bool logits_only = false) const;

    /// Bytes of all quantized weights in packed form.
    std::size_t packed_weight_bytes() const noexcept;
    /// Bytes the same weights take as 32-bit floats.
    std::size_t dense_weight_bytes() const noexcept;

    /// "BTPM" file: header, net spec, then per-parameter dense or BQT1 blobs.
    void save(std::ostream& os) const;
    static InferenceModel load(std::istream& is);

private:
    NetSpec spec_;
    QuantScheme scheme_;
    std::vector<LayerSlots> slots_;
    std::vector<std::string> names_;
    std::vector<Weight> weights_;
    std::vector<Tensor> buffers_;
};

}  // namespace bt::nn
