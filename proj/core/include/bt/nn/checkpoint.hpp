#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "bt/nn/network.hpp"
#include "bt/nn/optim.hpp"
#include "bt/quantizer.hpp"

namespace bt::nn {

/// Latent full-precision training state.
struct Checkpoint {
    Network net;
    OptimState optim;
    QuantScheme scheme;      // scheme the latent weights were trained under
    std::size_t epoch = 0;   // epochs completed
    std::string config_json; // free-form run metadata, "{}" if none
};

/// "BTCK" file: version, JSON header (spec, scheme, epoch, config), then
/// parameters, buffers and Adam moments as little-endian float tensors.
void save_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint load_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Leading four bytes of a file ("BTCK", "BTPM", ...); empty if shorter.
std::string file_magic(const std::filesystem::path& path);

}  // namespace bt::nn
