#include "bt/nn/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "bt/error.hpp"
#include "tensor_io.hpp"

namespace bt::nn {

namespace {

constexpr char kMagic[5] = "BTCK";
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(std::ostream& os, const Checkpoint& ck) {
    const auto& params = ck.net.params();
    ck.optim.validate(params);
    nlohmann::json h;
    h["netspec"] = nlohmann::json::parse(netspec_to_json(ck.net.spec()));
    h["scheme"] = std::string(scheme_name(ck.scheme.kind));
    h["granularity"] = ck.scheme.granularity == Granularity::PerOutputChannel ? "channel" : "tensor";
    h["ternary_delta_coeff"] = ck.scheme.ternary_delta_coeff;
    h["ternary_alpha_nonzero_only"] = ck.scheme.ternary_alpha_nonzero_only;
    h["epoch"] = ck.epoch;
    h["config"] = nlohmann::json::parse(ck.config_json.empty() ? "{}" : ck.config_json);
    h["adam"] = {{"lr", ck.optim.config.lr},
                 {"beta1", ck.optim.config.beta1},
                 {"beta2", ck.optim.config.beta2},
                 {"eps", ck.optim.config.eps},
                 {"step", ck.optim.step},
                 {"current_lr", ck.optim.lr}};

    io::write_magic(os, kMagic);
    io::write_le<std::uint32_t>(os, kVersion);
    io::write_string(os, h.dump());
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) io::write_tensor(os, p.value);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.net.buffers().size()));
    for (const auto& b : ck.net.buffers()) io::write_tensor(os, b);
    for (std::size_t i = 0; i < params.size(); ++i) {
        io::write_tensor(os, ck.optim.m[i]);
        io::write_tensor(os, ck.optim.v[i]);
    }
    if (!os) throw std::runtime_error("failed to write checkpoint");
}

Checkpoint load_checkpoint(std::istream& is) {
    io::expect_magic(is, kMagic, "checkpoint");
    if (io::read_le<std::uint32_t>(is) != kVersion) throw FormatError("checkpoint: unsupported version");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(io::read_string(is));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    Checkpoint ck;
    try {
        const NetSpec spec = netspec_from_json(h.at("netspec").dump());
        ck.scheme.kind = parse_scheme(h.at("scheme").get<std::string>());
        ck.scheme.granularity =
            h.at("granularity").get<std::string>() == "channel" ? Granularity::PerOutputChannel : Granularity::PerTensor;
        ck.scheme.ternary_delta_coeff = h.at("ternary_delta_coeff").get<float>();
        ck.scheme.ternary_alpha_nonzero_only = h.at("ternary_alpha_nonzero_only").get<bool>();
        ck.epoch = h.at("epoch").get<std::size_t>();
        ck.config_json = h.at("config").dump();
        const auto& a = h.at("adam");
        ck.optim.config = {a.at("lr").get<float>(), a.at("beta1").get<float>(), a.at("beta2").get<float>(),
                           a.at("eps").get<float>()};
        ck.optim.step = a.at("step").get<std::size_t>();
        ck.optim.lr = a.at("current_lr").get<float>();
        ck.net = Network(spec, 0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }

    std::vector<Parameter> params = ck.net.params();
    if (io::read_le<std::uint32_t>(is) != params.size()) throw FormatError("checkpoint: parameter count mismatch");
    for (auto& p : params) {
        p.value = io::read_tensor(is);
    }
    std::vector<Tensor> buffers(io::read_le<std::uint32_t>(is));
    if (buffers.size() != ck.net.buffers().size()) throw FormatError("checkpoint: buffer count mismatch");
    for (auto& b : buffers) b = io::read_tensor(is);
    try {
        ck.net.assign(std::move(params), std::move(buffers));
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    for (std::size_t i = 0; i < ck.net.params().size(); ++i) {
        ck.optim.m.push_back(io::read_tensor(is));
        ck.optim.v.push_back(io::read_tensor(is));
    }
    try {
        ck.optim.validate(ck.net.params());
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    save_checkpoint(os, ck);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return load_checkpoint(is);
}

std::string file_magic(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    char buf[4];
    if (!is.read(buf, 4)) return {};
    return std::string(buf, 4);
}

}  // namespace bt::nn
