#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bt/data/augment.hpp"
#include "bt/nn/netspec.hpp"
#include "bt/nn/train.hpp"
#include "bt/quantizer.hpp"
#include "bt/regularization.hpp"

namespace bt::cli {

/// Bad or inconsistent configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    nn::Task task = nn::Task::Classification;
    std::filesystem::path manifest;
    std::size_t limit_train = 0;  // 0 = all
    std::size_t limit_test = 0;

    std::string arch = "vgg6";  // vgg6 | espcn
    std::size_t k = 16;
    std::size_t scale = 2;

    QuantScheme scheme;
    TransitionRegConfig reg;
    nn::AdamConfig adam;
    std::size_t epochs = 60;
    std::size_t batch = 128;
    std::vector<double> milestones{0.5, 0.75};
    float decay = 0.1f;
    float ste_clip = 1.0f;
    data::AugmentPolicy augment;

    std::size_t patch = 17;   // LR patch side for SR / denoising
    std::size_t stride = 14;
    float sigma = 0.1f;       // denoising noise level on [0, 1]

    std::uint64_t seed = 0;
    std::filesystem::path out = "run";

    void validate() const;
    nn::TrainConfig train_config() const;
};

/// Every recognised key with its default, in schema order.
nlohmann::ordered_json config_defaults();

/// Parses a flat JSON object of dotted keys; unknown keys and type
/// mismatches raise ConfigError. Relative paths resolve against `base`.
RunConfig parse_config(const nlohmann::json& flat, const std::filesystem::path& base = {});
RunConfig load_config(const std::filesystem::path& path);

/// The effective configuration with all defaults resolved.
nlohmann::ordered_json to_json(const RunConfig& config);

/// Dataset manifest: {"name", "format": "idx"|"cifar"|"image_dir",
/// "classes", "train": {...}, "test": {...}} with split entries
/// {"images", "labels"} (idx), {"files": [...]} (cifar) or {"dir"} (image_dir).
/// Paths are relative to the manifest.
struct Split {
    std::filesystem::path images, labels, dir;
    std::vector<std::filesystem::path> files;
};

struct Manifest {
    std::string name;
    std::string format;
    std::size_t classes = 10;
    Split train, test;
};

Manifest load_manifest(const std::filesystem::path& path);

}  // namespace bt::cli
