#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"

namespace bt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point behind the btq binary; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct TrainOptions {
    std::filesystem::path resume;  // BTCK checkpoint to continue from
    std::size_t stop_after = 0;
};

/// Writes config.json, metrics.jsonl, checkpoint.btck, model.btpm and
/// summary.json into config.out.
void cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& out);

/// Prints the test metric of a BTPM model, or of a BTCK checkpoint packed
/// under `scheme_override` (its own scheme if empty).
void cmd_eval(const RunConfig& config, const std::filesystem::path& model,
              const std::string& scheme_override, std::ostream& out);

/// Packs a checkpoint into a BTPM file and prints per-layer diagnostics.
void cmd_quantize(const std::filesystem::path& checkpoint, const std::filesystem::path& output,
                  const std::string& scheme_override, std::ostream& out);

struct BenchOptions {
    std::filesystem::path model;  // BTPM; empty benches a synthetic VGG-6 conv stack
    std::size_t k = 16;
    double min_seconds = 0.2;
    std::uint64_t seed = 0;
};

/// Dense vs packed 3x3 convolution throughput per quantized layer.
void cmd_bench(const BenchOptions& options, std::ostream& out);

/// Markdown tables over the summary.json files of finished runs.
std::string format_report(const std::vector<nlohmann::json>& summaries);
void cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& output,
                std::ostream& out);

}  // namespace bt::cli
