#include "config.hpp"

#include <fstream>
#include <set>

#include "bt/error.hpp"

namespace bt::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

json read_json(const fs::path& path, const char* what) {
    std::ifstream is(path);
    if (!is) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

template <typename T>
T get(const json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

std::size_t get_count(const json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::string granularity_name(Granularity g) {
    return g == Granularity::PerOutputChannel ? "channel" : "tensor";
}

}  // namespace

ojson config_defaults() { return to_json(RunConfig{}); }

ojson to_json(const RunConfig& c) {
    ojson j;
    j["task"] = std::string(nn::task_name(c.task));
    j["data.manifest"] = c.manifest.string();
    j["data.limit_train"] = c.limit_train;
    j["data.limit_test"] = c.limit_test;
    j["net.arch"] = c.arch;
    j["net.k"] = c.k;
    j["net.scale"] = c.scale;
    j["scheme"] = std::string(scheme_name(c.scheme.kind));
    j["quant.granularity"] = granularity_name(c.scheme.granularity);
    j["quant.delta_coeff"] = c.scheme.ternary_delta_coeff;
    j["quant.ternary_nonzero_only"] = c.scheme.ternary_alpha_nonzero_only;
    j["reg.enabled"] = c.reg.enabled;
    j["reg.lambda"] = c.reg.lambda;
    j["reg.noise_gain"] = c.reg.noise_gain;
    j["reg.seed"] = c.reg.rng_seed;
    j["optim.lr"] = c.adam.lr;
    j["optim.beta1"] = c.adam.beta1;
    j["optim.beta2"] = c.adam.beta2;
    j["optim.epochs"] = c.epochs;
    j["optim.batch"] = c.batch;
    j["optim.milestones"] = c.milestones;
    j["optim.decay"] = c.decay;
    j["train.ste_clip"] = c.ste_clip;
    j["augment.random_crop"] = c.augment.random_crop;
    j["augment.crop_pad"] = c.augment.crop_pad;
    j["augment.cutout"] = c.augment.cutout;
    j["augment.cutout_size"] = c.augment.cutout_size;
    j["patch.size"] = c.patch;
    j["patch.stride"] = c.stride;
    j["denoise.sigma"] = c.sigma;
    j["seed"] = c.seed;
    j["out"] = c.out.string();
    return j;
}

RunConfig parse_config(const json& flat, const fs::path& base) {
    if (!flat.is_object()) throw ConfigError("config must be a JSON object");
    const ojson defaults = config_defaults();
    for (const auto& [key, value] : flat.items()) {
        if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        if (value.is_object()) throw ConfigError("config key '" + key + "' must not be nested");
    }
    json j = json::parse(defaults.dump());
    for (const auto& [key, value] : flat.items()) j[key] = value;

    RunConfig c;
    try {
        c.task = nn::parse_task(get<std::string>(j, "task"));
        c.scheme.kind = parse_scheme(get<std::string>(j, "scheme"));
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    c.manifest = resolve(base, get<std::string>(j, "data.manifest"));
    c.limit_train = get_count(j, "data.limit_train");
    c.limit_test = get_count(j, "data.limit_test");
    c.arch = get<std::string>(j, "net.arch");
    c.k = get_count(j, "net.k");
    c.scale = get_count(j, "net.scale");
    const auto gran = get<std::string>(j, "quant.granularity");
    if (gran != "tensor" && gran != "channel")
        throw ConfigError("quant.granularity must be 'tensor' or 'channel'");
    c.scheme.granularity = gran == "channel" ? Granularity::PerOutputChannel : Granularity::PerTensor;
    c.scheme.ternary_delta_coeff = get<float>(j, "quant.delta_coeff");
    c.scheme.ternary_alpha_nonzero_only = get<bool>(j, "quant.ternary_nonzero_only");
    c.reg.enabled = get<bool>(j, "reg.enabled");
    c.reg.lambda = get<float>(j, "reg.lambda");
    c.reg.noise_gain = get<float>(j, "reg.noise_gain");
    c.reg.rng_seed = get<std::uint64_t>(j, "reg.seed");
    c.adam.lr = get<float>(j, "optim.lr");
    c.adam.beta1 = get<float>(j, "optim.beta1");
    c.adam.beta2 = get<float>(j, "optim.beta2");
    c.epochs = get_count(j, "optim.epochs");
    c.batch = get_count(j, "optim.batch");
    c.milestones = get<std::vector<double>>(j, "optim.milestones");
    c.decay = get<float>(j, "optim.decay");
    c.ste_clip = get<float>(j, "train.ste_clip");
    c.augment.random_crop = get<bool>(j, "augment.random_crop");
    c.augment.crop_pad = get_count(j, "augment.crop_pad");
    c.augment.cutout = get<bool>(j, "augment.cutout");
    c.augment.cutout_size = get_count(j, "augment.cutout_size");
    c.patch = get_count(j, "patch.size");
    c.stride = get_count(j, "patch.stride");
    c.sigma = get<float>(j, "denoise.sigma");
    c.seed = get<std::uint64_t>(j, "seed");
    c.augment.seed = c.seed;
    c.out = resolve(base, get<std::string>(j, "out"));
    c.validate();
    return c;
}

RunConfig load_config(const fs::path& path) {
    return parse_config(read_json(path, "config"), path.parent_path());
}

void RunConfig::validate() const {
    if (arch != "vgg6" && arch != "espcn") throw ConfigError("net.arch must be 'vgg6' or 'espcn'");
    if (arch == "vgg6" && task != nn::Task::Classification)
        throw ConfigError("vgg6 is a classification network");
    if (arch == "espcn" && task == nn::Task::Classification)
        throw ConfigError("espcn needs task 'sr' or 'denoise'");
    if (arch == "vgg6" && k == 0) throw ConfigError("net.k must be >= 1");
    if (task == nn::Task::SuperResolution && (scale < 2 || scale > 4))
        throw ConfigError("net.scale must be 2, 3 or 4 for super-resolution");
    if (task == nn::Task::Denoise && !(sigma > 0.0f && sigma < 1.0f))
        throw ConfigError("denoise.sigma must lie in (0, 1)");
    if (patch == 0 || stride == 0) throw ConfigError("patch.size and patch.stride must be positive");
    try {
        train_config().validate();
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
}

nn::TrainConfig RunConfig::train_config() const {
    nn::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.adam = adam;
    t.schedule.milestones = milestones;
    t.schedule.factor = decay;
    t.seed = seed;
    t.scheme = scheme;
    t.reg = reg;
    t.augment = augment;
    t.ste_clip = ste_clip;
    return t;
}

Manifest load_manifest(const fs::path& path) {
    if (path.empty()) throw ConfigError("data.manifest is required");
    const json j = read_json(path, "manifest");
    const fs::path base = path.parent_path();
    Manifest m;
    try {
        m.name = j.value("name", path.stem().string());
        m.format = j.at("format").get<std::string>();
        m.classes = j.value("classes", std::size_t{10});
        if (m.format != "idx" && m.format != "cifar" && m.format != "image_dir")
            throw ConfigError("manifest format must be idx, cifar or image_dir");
        for (auto [key, split] : {std::pair{"train", &m.train}, std::pair{"test", &m.test}}) {
            const json& s = j.at(key);
            if (m.format == "idx") {
                split->images = resolve(base, s.at("images").get<std::string>());
                split->labels = resolve(base, s.at("labels").get<std::string>());
            } else if (m.format == "cifar") {
                for (const auto& f : s.at("files")) split->files.push_back(resolve(base, f.get<std::string>()));
            } else {
                split->dir = resolve(base, s.at("dir").get<std::string>());
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return m;
}

}  // namespace bt::cli
