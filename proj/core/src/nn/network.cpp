#include "bt/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "binary_io.hpp"
#include "bt/data/image.hpp"
#include "bt/error.hpp"
#include "tensor_io.hpp"

namespace bt::nn {

namespace {

constexpr char kModelMagic[5] = "BTPM";
constexpr std::uint32_t kModelVersion = 1;

// Adds (possibly upsampled) `src` into `dst`.
void add_skip(const Tensor& src, Tensor& dst) {
    if (src.shape() == dst.shape()) {
        for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
        return;
    }
    const Tensor up = data::resize_bicubic(src, dst.dim(2), dst.dim(3), false);
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += up[i];
}

std::size_t last_layer(const NetSpec& spec, bool logits_only) {
    const std::size_t n = spec.layers.size();
    if (logits_only && spec.layers.back().kind == LayerKind::Softmax) return n - 1;
    return n;
}

void check_input(const NetSpec& spec, const Tensor& input) {
    if (input.rank() != spec.input_shape.size() + 1 || input.dim(0) == 0 ||
        input.dim(1) != spec.input_shape[0])
        throw InvalidInput("network input " + shape_to_string(input.shape()) +
                           " does not match spec input " + shape_to_string(spec.input_shape));
    const bool fully_convolutional = std::none_of(
        spec.layers.begin(), spec.layers.end(),
        [](const LayerSpec& l) { return l.kind == LayerKind::FullyConnected; });
    if (!fully_convolutional &&
        (input.dim(2) != spec.input_shape[1] || input.dim(3) != spec.input_shape[2]))
        throw InvalidInput("network input " + shape_to_string(input.shape()) +
                           " must match spatial size " + shape_to_string(spec.input_shape));
}

void check_finite(const Tensor& t, std::size_t layer) {
    if (!t.all_finite())
        throw InvalidInput("non-finite activation after layer " + std::to_string(layer));
}

}  // namespace

ParamLayout layout_params(const NetSpec& spec) {
    const auto shapes = spec.activation_shapes();
    ParamLayout out;
    out.slots.resize(spec.layers.size());
    auto add_param = [&](std::size_t layer, const std::string& name, Shape shape, bool q) {
        out.params.push_back({"layer" + std::to_string(layer) + "." + name, Tensor(std::move(shape)),
                              layer, q});
        return static_cast<int>(out.params.size() - 1);
    };
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const Shape& in = shapes[i];
        LayerSlots& s = out.slots[i];
        switch (l.kind) {
            case LayerKind::Conv3x3:
                s.weight = add_param(i, "weight", {l.width, in[0], 3, 3}, l.quantized);
                s.bias = add_param(i, "bias", {l.width}, false);
                break;
            case LayerKind::FullyConnected:
                s.weight = add_param(i, "weight", {l.width, shape_numel(in)}, l.quantized);
                s.bias = add_param(i, "bias", {l.width}, false);
                break;
            case LayerKind::BatchNorm: {
                const std::size_t c = in[0];
                s.gamma = add_param(i, "gamma", {c}, false);
                out.params[static_cast<std::size_t>(s.gamma)].value.fill(1.0f);
                s.beta = add_param(i, "beta", {c}, false);
                out.buffers.emplace_back(Shape{c}, 0.0f);
                s.running_mean = static_cast<int>(out.buffers.size() - 1);
                out.buffers.emplace_back(Shape{c}, 1.0f);
                s.running_var = static_cast<int>(out.buffers.size() - 1);
                break;
            }
            default: break;
        }
    }
    return out;
}

Network::Network(NetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    ParamLayout layout = layout_params(spec_);
    slots_ = std::move(layout.slots);
    params_ = std::move(layout.params);
    buffers_ = std::move(layout.buffers);
    Rng rng(seed);
    for (const auto& s : slots_) {
        if (s.weight < 0) continue;
        Tensor& w = params_[static_cast<std::size_t>(s.weight)].value;
        const std::size_t fan_in = w.numel() / w.dim(0);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (float& v : w.values()) v = static_cast<float>(normal(rng));
    }
}

std::size_t Network::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void Network::assign(std::vector<Parameter> params, std::vector<Tensor> buffers) {
    if (params.size() != params_.size() || buffers.size() != buffers_.size())
        throw InvalidInput("parameter count does not match network layout");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].value.shape() != params_[i].value.shape())
            throw InvalidInput("parameter " + params_[i].name + " shape mismatch");
    for (std::size_t i = 0; i < buffers.size(); ++i)
        if (buffers[i].shape() != buffers_[i].shape())
            throw InvalidInput("buffer shape mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params_[i].value = std::move(params[i].value);
    buffers_ = std::move(buffers);
}

Tensor forward(Network& net, const Tensor& input, const QuantScheme& scheme, Mode mode,
               ForwardCache* cache, const ForwardOptions& options) {
    if (mode == Mode::Eval) {
        const auto model = InferenceModel::from_network(net, scheme, true);
        return model.forward(input, options.logits_only);
    }
    const NetSpec& spec = net.spec();
    check_input(spec, input);
    scheme.validate();
    const std::size_t n_layers = last_layer(spec, options.logits_only);

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c = ForwardCache{};
    c.scheme = scheme;
    c.logits_only = options.logits_only;
    c.activations.reserve(n_layers + 1);
    c.activations.push_back(input);
    c.effective_weights.resize(net.params().size());
    c.quantized.resize(net.params().size());
    c.batchnorm.resize(spec.layers.size());
    c.argmax.resize(spec.layers.size());

    auto weight_of = [&](int idx) -> const Tensor& {
        const auto i = static_cast<std::size_t>(idx);
        const Parameter& p = net.params()[i];
        if (!p.quantized || !scheme.quantizes()) return p.value;
        c.quantized[i] = quantize(p.value, scheme);
        c.effective_weights[i] = dequantize(c.quantized[i]);
        return c.effective_weights[i];
    };
    auto param = [&](int idx) -> const Tensor& { return net.params()[static_cast<std::size_t>(idx)].value; };

    for (std::size_t i = 0; i < n_layers; ++i) {
        const LayerSpec& l = spec.layers[i];
        const LayerSlots& s = net.slots()[i];
        const Tensor& x = c.activations.back();
        Tensor y;
        switch (l.kind) {
            case LayerKind::Conv3x3: y = conv2d(x, weight_of(s.weight), &param(s.bias), 1, 1); break;
            case LayerKind::FullyConnected: y = linear(x, weight_of(s.weight), &param(s.bias)); break;
            case LayerKind::MaxPool2: y = maxpool2(x, &c.argmax[i]); break;
            case LayerKind::BatchNorm: {
                Tensor* rm = options.update_running_stats
                                 ? &net.buffers()[static_cast<std::size_t>(s.running_mean)]
                                 : nullptr;
                Tensor* rv = options.update_running_stats
                                 ? &net.buffers()[static_cast<std::size_t>(s.running_var)]
                                 : nullptr;
                y = batchnorm_train(x, param(s.gamma), param(s.beta), c.batchnorm[i], rm, rv);
                break;
            }
            case LayerKind::ReLU: y = relu(x); break;
            case LayerKind::SubPixel: y = subpixel(x, l.width); break;
            case LayerKind::Softmax: y = softmax(x); break;
        }
        for (const auto& sk : spec.skips)
            if (sk.to == i + 1) add_skip(c.activations[sk.from], y);
        check_finite(y, i);
        c.activations.push_back(std::move(y));
    }
    c.valid = true;
    return c.activations.back();
}

std::vector<std::uint8_t> ste_window(const Tensor& latent, const QuantTensor& q, float ste_clip) {
    std::vector<std::uint8_t> mask(latent.numel(), 0);
    const std::size_t gs = q.group_size();
    for (std::size_t i = 0; i < latent.numel(); ++i)
        mask[i] = std::fabs(latent[i]) <= ste_clip * q.alpha1[i / gs] ? 1 : 0;
    return mask;
}

std::vector<Tensor> backward_ste(const Network& net, const ForwardCache& cache,
                                 const Tensor& output_grad, float ste_clip) {
    if (!cache.valid || cache.activations.empty())
        throw InvalidInput("backward_ste: missing or stale forward cache");
    const NetSpec& spec = net.spec();
    const std::size_t n_layers = cache.activations.size() - 1;
    if (output_grad.shape() != cache.activations.back().shape())
        throw InvalidInput("backward_ste: output gradient shape mismatch");

    std::vector<Tensor> grads(net.params().size());
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] = Tensor(net.params()[i].value.shape());

    auto weight_used = [&](int idx) -> const Tensor& {
        const auto i = static_cast<std::size_t>(idx);
        return cache.effective_weights[i].empty() ? net.params()[i].value : cache.effective_weights[i];
    };
    auto store_weight_grad = [&](int idx, Tensor dw) {
        const auto i = static_cast<std::size_t>(idx);
        if (!cache.quantized[i].planes.empty()) {
            const auto mask = ste_window(net.params()[i].value, cache.quantized[i], ste_clip);
            for (std::size_t j = 0; j < dw.numel(); ++j)
                if (!mask[j]) dw[j] = 0.0f;
        }
        grads[i] = std::move(dw);
    };

    std::vector<Tensor> pending(n_layers + 1);
    Tensor g = output_grad;
    for (std::size_t li = n_layers; li-- > 0;) {
        for (const auto& sk : spec.skips) {
            if (sk.to != li + 1 || sk.from == 0) continue;
            Tensor& dst = pending[sk.from];
            if (dst.empty()) dst = Tensor(cache.activations[sk.from].shape());
            for (std::size_t j = 0; j < g.numel(); ++j) dst[j] += g[j];
        }
        const LayerSpec& l = spec.layers[li];
        const LayerSlots& s = net.slots()[li];
        const Tensor& x = cache.activations[li];
        const Tensor& y = cache.activations[li + 1];
        const bool need_dx = li > 0;
        Tensor dx;
        switch (l.kind) {
            case LayerKind::Conv3x3: {
                auto cg = conv2d_backward(x, weight_used(s.weight), g, 1, 1, need_dx);
                store_weight_grad(s.weight, std::move(cg.dw));
                grads[static_cast<std::size_t>(s.bias)] = std::move(cg.db);
                dx = std::move(cg.dx);
                break;
            }
            case LayerKind::FullyConnected: {
                auto lg = linear_backward(x, weight_used(s.weight), g);
                store_weight_grad(s.weight, std::move(lg.dw));
                grads[static_cast<std::size_t>(s.bias)] = std::move(lg.db);
                dx = std::move(lg.dx);
                dx.reshape(x.shape());
                break;
            }
            case LayerKind::MaxPool2: dx = maxpool2_backward(x.shape(), cache.argmax[li], g); break;
            case LayerKind::BatchNorm: {
                const Tensor& gamma = net.params()[static_cast<std::size_t>(s.gamma)].value;
                auto bg = batchnorm_backward(cache.batchnorm[li], gamma, g);
                grads[static_cast<std::size_t>(s.gamma)] = std::move(bg.dgamma);
                grads[static_cast<std::size_t>(s.beta)] = std::move(bg.dbeta);
                dx = std::move(bg.dx);
                break;
            }
            case LayerKind::ReLU: dx = relu_backward(y, g); break;
            case LayerKind::SubPixel: dx = subpixel_backward(g, l.width); break;
            case LayerKind::Softmax: dx = softmax_backward(y, g); break;
        }
        if (!need_dx) break;
        if (!pending[li].empty())
            for (std::size_t j = 0; j < dx.numel(); ++j) dx[j] += pending[li][j];
        g = std::move(dx);
    }
    return grads;
}

RegularizedLoss loss_with_regularization(double task_loss, const Network& net,
                                         const QuantScheme& scheme,
                                         const TransitionRegConfig& reg, Rng& rng,
                                         float ste_clip) {
    RegularizedLoss out;
    out.loss = task_loss;
    if (!reg.enabled) return out;
    if (!scheme.quantizes())
        throw InvalidInput("transition regularization requires a quantized scheme");
    reg.validate();
    out.grads.resize(net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const Parameter& p = net.params()[i];
        if (!p.quantized) continue;
        const TransitionPenalty tp = transition_penalty(p.value, scheme, reg, rng);
        out.penalty += tp.penalty;
        const auto mask = ste_window(p.value, tp.quantized, ste_clip);
        Tensor grad(p.value.shape());
        // Where W~ crossed a transition, step W toward W~: descending this
        // raises the expected flip rate, i.e. pulls W onto the transition.
        // (The straight-through derivative of -|q(W) - q(W~)| with W~ held
        // fixed has the opposite sign and pushes weights away.)
        const float unit = reg.lambda / static_cast<float>(p.value.numel());
        for (std::size_t j = 0; j < grad.numel(); ++j)
            if (mask[j]) grad[j] = unit * static_cast<float>(tp.divergence_sign[j]);
        out.grads[i] = std::move(grad);
    }
    if (reg.lambda != 0.0f) out.loss = task_loss - static_cast<double>(reg.lambda) * out.penalty;
    return out;
}

InferenceModel InferenceModel::from_network(const Network& net, const QuantScheme& scheme,
                                            bool packed) {
    scheme.validate();
    InferenceModel m;
    m.spec_ = net.spec();
    m.scheme_ = scheme;
    m.slots_ = net.slots();
    m.buffers_ = net.buffers();
    for (const auto& p : net.params()) {
        m.names_.push_back(p.name);
        if (p.quantized && scheme.quantizes()) {
            QuantTensor q = quantize(p.value, scheme);
            if (packed)
                m.weights_.emplace_back(pack(q));
            else
                m.weights_.emplace_back(dequantize(q));
        } else {
            m.weights_.emplace_back(p.value);
        }
    }
    return m;
}

Tensor InferenceModel::forward(const Tensor& input, bool logits_only) const {
    check_input(spec_, input);
    const std::size_t n_layers = last_layer(spec_, logits_only);
    std::vector<Tensor> acts;
    acts.reserve(n_layers + 1);
    acts.push_back(input);
    auto dense = [&](int idx) -> const Tensor& {
        return std::get<Tensor>(weights_[static_cast<std::size_t>(idx)]);
    };
    for (std::size_t i = 0; i < n_layers; ++i) {
        const LayerSpec& l = spec_.layers[i];
        const LayerSlots& s = slots_[i];
        const Tensor& x = acts.back();
        Tensor y;
        switch (l.kind) {
            case LayerKind::Conv3x3: {
                const auto& w = weights_[static_cast<std::size_t>(s.weight)];
                const Tensor& b = dense(s.bias);
                if (const auto* p = std::get_if<PackedQuantTensor>(&w)) {
                    y = packed_conv2d(*p, x, 1, 1);
                    const std::size_t hw = y.dim(2) * y.dim(3);
                    for (std::size_t n = 0; n < y.dim(0); ++n)
                        for (std::size_t f = 0; f < y.dim(1); ++f)
                            for (std::size_t j = 0; j < hw; ++j) y[(n * y.dim(1) + f) * hw + j] += b[f];
                } else {
                    y = conv2d(x, std::get<Tensor>(w), &b, 1, 1);
                }
                break;
            }
            case LayerKind::FullyConnected: {
                const auto& w = weights_[static_cast<std::size_t>(s.weight)];
                const Tensor& b = dense(s.bias);
                if (const auto* p = std::get_if<PackedQuantTensor>(&w)) {
                    y = packed_linear(*p, x.reshaped({x.dim(0), x.numel() / x.dim(0)}));
                    for (std::size_t n = 0; n < y.dim(0); ++n)
                        for (std::size_t o = 0; o < y.dim(1); ++o) y[n * y.dim(1) + o] += b[o];
                } else {
                    y = linear(x, std::get<Tensor>(w), &b);
                }
                break;
            }
            case LayerKind::MaxPool2: y = maxpool2(x, nullptr); break;
            case LayerKind::BatchNorm:
                y = batchnorm_eval(x, dense(s.gamma), dense(s.beta),
                                   buffers_[static_cast<std::size_t>(s.running_mean)],
                                   buffers_[static_cast<std::size_t>(s.running_var)]);
                break;
            case LayerKind::ReLU: y = relu(x); break;
            case LayerKind::SubPixel: y = subpixel(x, l.width); break;
            case LayerKind::Softmax: y = softmax(x); break;
        }
        for (const auto& sk : spec_.skips)
            if (sk.to == i + 1) add_skip(acts[sk.from], y);
        check_finite(y, i);
        acts.push_back(std::move(y));
    }
    return std::move(acts.back());
}

std::size_t InferenceModel::packed_weight_bytes() const noexcept {
    std::size_t bytes = 0;
    for (const auto& w : weights_)
        if (const auto* p = std::get_if<PackedQuantTensor>(&w)) bytes += p->storage_bytes();
    return bytes;
}

std::size_t InferenceModel::dense_weight_bytes() const noexcept {
    std::size_t bytes = 0;
    for (const auto& w : weights_)
        if (const auto* p = std::get_if<PackedQuantTensor>(&w)) bytes += p->numel() * sizeof(float);
    return bytes;
}

void InferenceModel::save(std::ostream& os) const {
    io::write_magic(os, kModelMagic);
    io::write_le<std::uint32_t>(os, kModelVersion);
    io::write_string(os, netspec_to_json(spec_));
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(scheme_.kind));
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(scheme_.granularity));
    io::write_le<std::uint8_t>(os, scheme_.ternary_alpha_nonzero_only ? 1 : 0);
    io::write_le<float>(os, scheme_.ternary_delta_coeff);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(weights_.size()));
    for (const auto& w : weights_) {
        if (const auto* p = std::get_if<PackedQuantTensor>(&w)) {
            io::write_le<std::uint8_t>(os, 1);
            write_packed(os, *p);
        } else {
            io::write_le<std::uint8_t>(os, 0);
            io::write_tensor(os, std::get<Tensor>(w));
        }
    }
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(buffers_.size()));
    for (const auto& b : buffers_) io::write_tensor(os, b);
    if (!os) throw std::runtime_error("failed to write packed model");
}

InferenceModel InferenceModel::load(std::istream& is) {
    io::expect_magic(is, kModelMagic, "packed model");
    if (io::read_le<std::uint32_t>(is) != kModelVersion)
        throw FormatError("packed model: unsupported version");
    InferenceModel m;
    m.spec_ = netspec_from_json(io::read_string(is));
    const auto kind = io::read_le<std::uint8_t>(is);
    if (kind > static_cast<std::uint8_t>(SchemeKind::BinaryPair))
        throw FormatError("packed model: unknown scheme");
    m.scheme_.kind = static_cast<SchemeKind>(kind);
    const auto gran = io::read_le<std::uint8_t>(is);
    if (gran > 1) throw FormatError("packed model: unknown granularity");
    m.scheme_.granularity = static_cast<Granularity>(gran);
    m.scheme_.ternary_alpha_nonzero_only = io::read_le<std::uint8_t>(is) != 0;
    m.scheme_.ternary_delta_coeff = io::read_le<float>(is);

    ParamLayout layout = layout_params(m.spec_);
    m.slots_ = layout.slots;
    const auto count = io::read_le<std::uint32_t>(is);
    if (count != layout.params.size()) throw FormatError("packed model: parameter count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
        const auto tag = io::read_le<std::uint8_t>(is);
        const Shape& expected = layout.params[i].value.shape();
        if (tag == 1) {
            PackedQuantTensor p = read_packed(is);
            if (p.shape != expected) throw FormatError("packed model: weight shape mismatch");
            m.weights_.emplace_back(std::move(p));
        } else if (tag == 0) {
            Tensor t = io::read_tensor(is);
            if (t.shape() != expected) throw FormatError("packed model: weight shape mismatch");
            m.weights_.emplace_back(std::move(t));
        } else {
            throw FormatError("packed model: bad weight tag");
        }
        m.names_.push_back(layout.params[i].name);
    }
    const auto buffers = io::read_le<std::uint32_t>(is);
    if (buffers != layout.buffers.size()) throw FormatError("packed model: buffer count mismatch");
    for (std::size_t i = 0; i < buffers; ++i) {
        Tensor t = io::read_tensor(is);
        if (t.shape() != layout.buffers[i].shape()) throw FormatError("packed model: buffer shape mismatch");
        m.buffers_.push_back(std::move(t));
    }
    return m;
}

}  // namespace bt::nn
