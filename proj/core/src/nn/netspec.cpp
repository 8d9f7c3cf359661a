#include "bt/nn/netspec.hpp"

#include <json.hpp>

#include "bt/error.hpp"

namespace bt::nn {

namespace {

using nlohmann::json;

const char* const kLayerNames[] = {"conv3x3", "fc", "maxpool2", "batchnorm",
                                   "relu",    "subpixel", "softmax"};

LayerKind parse_layer_kind(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kLayerNames); ++i)
        if (name == kLayerNames[i]) return static_cast<LayerKind>(i);
    throw InvalidInput("unknown layer kind '" + std::string(name) + "'");
}

std::string where(std::size_t i, const LayerSpec& l) {
    return "layer " + std::to_string(i) + " (" + std::string(layer_kind_name(l.kind)) + ")";
}

}  // namespace

std::string_view task_name(Task task) noexcept {
    switch (task) {
        case Task::Classification: return "classification";
        case Task::SuperResolution: return "super_resolution";
        case Task::Denoise: return "denoise";
    }
    return "unknown";
}

Task parse_task(std::string_view name) {
    if (name == "classification") return Task::Classification;
    if (name == "super_resolution" || name == "sr") return Task::SuperResolution;
    if (name == "denoise") return Task::Denoise;
    throw InvalidInput("unknown task '" + std::string(name) + "'");
}

std::string_view layer_kind_name(LayerKind kind) noexcept {
    const auto i = static_cast<std::size_t>(kind);
    return i < std::size(kLayerNames) ? kLayerNames[i] : "unknown";
}

std::vector<Shape> NetSpec::activation_shapes() const {
    if (input_shape.size() != 3 || shape_numel(input_shape) == 0)
        throw InvalidInput("net input shape must be [C, H, W], got " + shape_to_string(input_shape));
    if (layers.empty()) throw InvalidInput("net has no layers");
    std::vector<Shape> shapes{input_shape};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const Shape& in = shapes.back();
        Shape out;
        if (l.quantized && l.kind != LayerKind::Conv3x3 && l.kind != LayerKind::FullyConnected)
            throw InvalidInput(where(i, l) + " has no weights to quantize");
        switch (l.kind) {
            case LayerKind::Conv3x3:
                if (in.size() != 3) throw InvalidInput(where(i, l) + " needs an image input");
                if (l.width == 0) throw InvalidInput(where(i, l) + " needs width >= 1");
                out = {l.width, in[1], in[2]};
                break;
            case LayerKind::FullyConnected:
                if (l.width == 0) throw InvalidInput(where(i, l) + " needs width >= 1");
                out = {l.width};
                break;
            case LayerKind::MaxPool2:
                if (in.size() != 3 || in[1] < 2 || in[2] < 2)
                    throw InvalidInput(where(i, l) + " needs an image input of at least 2x2");
                out = {in[0], in[1] / 2, in[2] / 2};
                break;
            case LayerKind::BatchNorm:
            case LayerKind::ReLU: out = in; break;
            case LayerKind::SubPixel: {
                const std::size_t s = l.width;
                if (s < 2 || s > 4) throw InvalidInput(where(i, l) + " scale must be 2, 3 or 4");
                if (in.size() != 3 || in[0] % (s * s) != 0)
                    throw InvalidInput(where(i, l) + " needs channels divisible by scale^2");
                out = {in[0] / (s * s), in[1] * s, in[2] * s};
                break;
            }
            case LayerKind::Softmax:
                if (in.size() != 1 || i + 1 != layers.size())
                    throw InvalidInput(where(i, l) + " must be the last layer on a vector input");
                out = in;
                break;
            default: throw InvalidInput("unknown layer kind");
        }
        shapes.push_back(std::move(out));
    }
    for (const auto& s : skips) {
        if (s.from >= s.to || s.to >= shapes.size())
            throw InvalidInput("skip connection indices out of order");
        const Shape& a = shapes[s.from];
        const Shape& b = shapes[s.to];
        if (a == b) continue;
        const bool upsample = s.from == 0 && a.size() == 3 && b.size() == 3 && a[0] == b[0] &&
                              b[1] % a[1] == 0 && b[1] / a[1] == b[2] / a[2] &&
                              b[2] % a[2] == 0;
        if (!upsample)
            throw InvalidInput("skip connection shapes " + shape_to_string(a) + " -> " +
                               shape_to_string(b) + " do not conform");
    }
    return shapes;
}

NetSpec build_vgg6(std::size_t k, Shape input_shape, std::size_t classes) {
    if (k == 0) throw InvalidInput("build_vgg6: K must be >= 1");
    if (classes < 2) throw InvalidInput("build_vgg6: need at least 2 classes");
    NetSpec net;
    net.task = Task::Classification;
    net.input_shape = std::move(input_shape);
    for (std::size_t width : {k, 2 * k, 4 * k}) {
        for (int rep = 0; rep < 2; ++rep) {
            net.layers.push_back({LayerKind::Conv3x3, width, true});
            net.layers.push_back({LayerKind::BatchNorm, 0, false});
            net.layers.push_back({LayerKind::ReLU, 0, false});
        }
        net.layers.push_back({LayerKind::MaxPool2, 0, false});
    }
    net.layers.push_back({LayerKind::FullyConnected, 8 * k, false});
    net.layers.push_back({LayerKind::ReLU, 0, false});
    net.layers.push_back({LayerKind::FullyConnected, classes, false});
    net.layers.push_back({LayerKind::Softmax, 0, false});
    net.validate();
    return net;
}

NetSpec build_espcn(std::size_t scale, Task task, Shape input_shape) {
    if (scale < 1 || scale > 4) throw InvalidInput("build_espcn: scale must be in 1..4");
    if (task == Task::Classification) throw InvalidInput("build_espcn: not a restoration task");
    if ((scale == 1) != (task == Task::Denoise))
        throw InvalidInput("build_espcn: scale 1 is denoising, scales 2..4 super-resolution");
    NetSpec net;
    net.task = task;
    net.input_shape = std::move(input_shape);
    constexpr std::size_t width = 64;
    // Channels surviving the pixel shuffle; 16 * 2^2 keeps the x2 trunk at 64.
    constexpr std::size_t shuffled = 16;
    for (int i = 0; i < 5; ++i) {
        const bool last_trunk = i == 4;
        const std::size_t w = last_trunk && scale > 1 ? shuffled * scale * scale : width;
        net.layers.push_back({LayerKind::Conv3x3, w, i != 0});
        net.layers.push_back({LayerKind::ReLU, 0, false});
    }
    if (scale > 1) net.layers.push_back({LayerKind::SubPixel, scale, false});
    net.layers.push_back({LayerKind::Conv3x3, net.input_shape.at(0), false});
    net.skips.push_back({0, net.layers.size()});
    net.validate();
    return net;
}

std::string netspec_to_json(const NetSpec& spec) {
    json j;
    j["task"] = std::string(task_name(spec.task));
    j["input_shape"] = spec.input_shape;
    j["layers"] = json::array();
    for (const auto& l : spec.layers)
        j["layers"].push_back({{"kind", std::string(layer_kind_name(l.kind))},
                               {"width", l.width},
                               {"quantized", l.quantized}});
    j["skips"] = json::array();
    for (const auto& s : spec.skips) j["skips"].push_back({s.from, s.to});
    return j.dump();
}

NetSpec netspec_from_json(std::string_view text) {
    NetSpec spec;
    try {
        const json j = json::parse(text);
        spec.task = parse_task(j.at("task").get<std::string>());
        spec.input_shape = j.at("input_shape").get<Shape>();
        for (const auto& l : j.at("layers"))
            spec.layers.push_back({parse_layer_kind(l.at("kind").get<std::string>()),
                                   l.at("width").get<std::size_t>(),
                                   l.at("quantized").get<bool>()});
        for (const auto& s : j.at("skips"))
            spec.skips.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    } catch (const json::exception& e) {
        throw FormatError(std::string("net spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

}  // namespace bt::nn
