#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "bt/data/dataset.hpp"
#include "bt/data/image.hpp"
#include "bt/data/pairs.hpp"
#include "bt/error.hpp"
#include "bt/nn/checkpoint.hpp"
#include "bt/nn/ops.hpp"
#include "bt/packing.hpp"

namespace bt::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Training/evaluation inputs resolved from a run config and its manifest.
struct Experiment {
    std::string dataset;
    nn::NetSpec spec;
    nn::TrainData train;
    nn::TrainData val;
    nn::TrainData test;                   // classification
    std::vector<data::Image> test_images; // restoration
    std::vector<Tensor> test_y;
};

std::vector<data::Image> load_images(const fs::path& dir, std::size_t limit) {
    auto images = data::load_image_dir(dir);
    if (limit && images.size() > limit) images.resize(limit);
    return images;
}

std::vector<Tensor> to_luma(const std::vector<data::Image>& images) {
    std::vector<Tensor> y;
    y.reserve(images.size());
    for (const auto& img : images) y.push_back(data::rgb_to_y(img, true));
    return y;
}

nn::TrainData pairs_data(const data::PatchPairSet& p) { return {p.inputs, {}, p.targets}; }

data::LabeledImageSet load_split(const Manifest& m, const Split& s) {
    if (m.format == "idx") return data::load_idx(s.images, s.labels, m.classes);
    return data::load_cifar_binary(s.files);
}

Experiment load_experiment(const RunConfig& cfg, bool with_train) {
    const Manifest m = load_manifest(cfg.manifest);
    Experiment ex;
    ex.dataset = m.name;
    if (cfg.task == nn::Task::Classification) {
        if (m.format == "image_dir") throw ConfigError("classification needs an idx or cifar manifest");
        const auto test = load_split(m, m.test).head(cfg.limit_test);
        ex.test = {test.to_tensor(), test.labels, {}};
        ex.val = ex.test;
        if (with_train) {
            const auto train = load_split(m, m.train).head(cfg.limit_train);
            if (train.channels != test.channels || train.height != test.height || train.width != test.width)
                throw FormatError("train and test images differ in shape");
            ex.train = {train.to_tensor(), train.labels, {}};
        }
        ex.spec = nn::build_vgg6(cfg.k, {test.channels, test.height, test.width}, m.classes);
        return ex;
    }

    if (m.format != "image_dir") throw ConfigError("restoration tasks need an image_dir manifest");
    ex.test_images = load_images(m.test.dir, cfg.limit_test);
    ex.test_y = to_luma(ex.test_images);
    const Shape patch_shape{1, cfg.patch, cfg.patch};
    if (cfg.task == nn::Task::SuperResolution) {
        ex.spec = nn::build_espcn(cfg.scale, cfg.task, patch_shape);
        ex.val = pairs_data(data::make_sr_pairs(ex.test_y, cfg.scale, cfg.patch, cfg.patch));
        if (with_train) {
            const auto train_y = to_luma(load_images(m.train.dir, cfg.limit_train));
            ex.train = pairs_data(data::make_sr_pairs(train_y, cfg.scale, cfg.patch, cfg.stride));
        }
    } else {
        ex.spec = nn::build_espcn(1, cfg.task, patch_shape);
        Rng rng(cfg.seed);
        if (with_train) {
            const auto train_y = to_luma(load_images(m.train.dir, cfg.limit_train));
            ex.train = pairs_data(data::make_noise_pairs(train_y, cfg.sigma, cfg.patch, cfg.stride, rng));
        }
        Rng val_rng(cfg.seed + 1);
        ex.val = pairs_data(data::make_noise_pairs(ex.test_y, cfg.sigma, cfg.patch, cfg.patch, val_rng));
    }
    return ex;
}

struct FinalMetric {
    std::string name;  // top1 | psnr
    double value = 0.0;
    std::optional<double> baseline;  // bicubic or noisy-input PSNR
    std::string baseline_name;
};

FinalMetric final_metric(const RunConfig& cfg, const Experiment& ex, const nn::InferenceModel& model) {
    FinalMetric r;
    switch (cfg.task) {
        case nn::Task::Classification:
            r.name = "top1";
            r.value = 100.0 * nn::evaluate(model, ex.test).metric;
            break;
        case nn::Task::SuperResolution:
            r.name = "psnr";
            r.value = nn::evaluate_sr_images(model, ex.test_y, cfg.scale);
            r.baseline = data::bicubic_baseline_psnr(ex.test_images, cfg.scale);
            r.baseline_name = "bicubic";
            break;
        case nn::Task::Denoise: {
            r.name = "psnr";
            Rng rng(cfg.seed + 2);
            double noisy = 0.0;
            r.value = nn::evaluate_denoise_images(model, ex.test_y, cfg.sigma, rng, &noisy);
            r.baseline = noisy;
            r.baseline_name = "noisy";
            break;
        }
    }
    return r;
}

ojson epoch_record(const nn::EpochMetrics& m) {
    ojson j;
    j["epoch"] = m.epoch;
    j["lr"] = m.lr;
    j["train_loss"] = m.train_loss;
    j["train_metric"] = m.train_metric;
    j["penalty"] = m.penalty;
    if (m.has_val) {
        j["val_loss"] = m.val_loss;
        j["val_metric"] = m.val_metric;
    }
    j["mean_distance_to_transition"] = m.mean_distance_to_transition;
    ojson layers = ojson::array();
    for (const auto& l : m.layers)
        layers.push_back({{"name", l.name}, {"mse", l.mse}, {"distance", l.mean_distance_to_transition}});
    j["layers"] = std::move(layers);
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_model(const fs::path& path, const nn::InferenceModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    model.save(os);
}

nn::InferenceModel load_model(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return nn::InferenceModel::load(is);
}

QuantScheme with_kind(QuantScheme s, const std::string& name) {
    if (name.empty()) return s;
    try {
        s.kind = parse_scheme(name);
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    return s;
}

std::string label(SchemeKind k) {
    switch (k) {
        case SchemeKind::Full: return "Full";
        case SchemeKind::Binary: return "BWN";
        case SchemeKind::Ternary: return "TWN";
        case SchemeKind::BT: return "BT";
        case SchemeKind::BinaryPair: return "Pair";
    }
    return "?";
}

}  // namespace

void cmd_train(const RunConfig& cfg, const TrainOptions& options, std::ostream& out) {
    cfg.validate();
    const Experiment ex = load_experiment(cfg, true);
    fs::create_directories(cfg.out);
    const ojson effective = to_json(cfg);
    write_text(cfg.out / "config.json", effective.dump(2) + "\n");

    nn::Network net;
    nn::OptimState optim;
    std::size_t start = 0;
    if (!options.resume.empty()) {
        nn::Checkpoint ck = nn::load_checkpoint(options.resume);
        if (!(ck.net.spec() == ex.spec)) throw ConfigError("checkpoint network does not match the config");
        if (!(ck.scheme == cfg.scheme)) throw ConfigError("checkpoint was trained under a different scheme");
        net = std::move(ck.net);
        optim = std::move(ck.optim);
        start = ck.epoch;
    } else {
        net = nn::Network(ex.spec, cfg.seed);
    }

    const fs::path metrics_path = cfg.out / "metrics.jsonl";
    std::ofstream metrics(metrics_path, start ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());

    nn::TrainConfig tc = cfg.train_config();
    tc.stop_after = options.stop_after;
    auto on_epoch = [&](const nn::EpochMetrics& m) {
        metrics << epoch_record(m).dump() << '\n';
        metrics.flush();
        out << fmt("epoch %zu/%zu  lr %.3g  loss %.5f  train %.4f", m.epoch + 1, cfg.epochs,
                   static_cast<double>(m.lr), m.train_loss, m.train_metric);
        if (m.has_val) out << fmt("  val %.4f", m.val_metric);
        if (cfg.scheme.quantizes()) out << fmt("  dist %.4g", m.mean_distance_to_transition);
        if (cfg.reg.enabled) out << fmt("  penalty %.4g", m.penalty);
        out << '\n';
    };

    nn::TrainResult result;
    try {
        result = nn::train(net, ex.train, &ex.val, tc, on_epoch, start ? &optim : nullptr, start);
    } catch (const DivergenceError& e) {
        write_text(cfg.out / "divergence.json", e.snapshot() + "\n");
        throw;
    }
    const std::size_t done = start + result.history.size();

    nn::Checkpoint ck{net, result.optim, cfg.scheme, done, effective.dump()};
    nn::save_checkpoint(cfg.out / "checkpoint.btck", ck);
    if (done < cfg.epochs) {
        out << "stopped after " << done << " of " << cfg.epochs << " epochs\n";
        return;
    }

    const auto model = nn::InferenceModel::from_network(net, cfg.scheme, true);
    save_model(cfg.out / "model.btpm", model);
    const FinalMetric fm = final_metric(cfg, ex, model);

    ojson s;
    s["dataset"] = ex.dataset;
    s["task"] = std::string(nn::task_name(cfg.task));
    s["arch"] = cfg.arch;
    s["k"] = cfg.k;
    s["scale"] = cfg.scale;
    s["sigma"] = cfg.sigma;
    s["scheme"] = std::string(scheme_name(cfg.scheme.kind));
    s["reg"] = cfg.reg.enabled;
    s["lambda"] = cfg.reg.lambda;
    s["seed"] = cfg.seed;
    s["epochs"] = cfg.epochs;
    s["metric_name"] = fm.name;
    s["metric"] = fm.value;
    if (fm.baseline) s[fm.baseline_name] = *fm.baseline;
    const auto& last = result.history.empty() ? nn::EpochMetrics{} : result.history.back();
    s["mean_distance_to_transition"] = last.mean_distance_to_transition;
    s["packed_weight_bytes"] = model.packed_weight_bytes();
    s["dense_weight_bytes"] = model.dense_weight_bytes();
    write_text(cfg.out / "summary.json", s.dump(2) + "\n");

    out << fm.name << ' ' << fmt("%.2f", fm.value);
    if (fm.baseline) out << "  (" << fm.baseline_name << ' ' << fmt("%.2f", *fm.baseline) << ')';
    out << '\n';
}

void cmd_eval(const RunConfig& cfg, const fs::path& model_path, const std::string& scheme_override,
              std::ostream& out) {
    const std::string magic = nn::file_magic(model_path);
    nn::InferenceModel model;
    if (magic == "BTPM") {
        if (!scheme_override.empty()) throw ConfigError("a packed model's scheme cannot be overridden");
        model = load_model(model_path);
    } else if (magic == "BTCK") {
        const nn::Checkpoint ck = nn::load_checkpoint(model_path);
        model = nn::InferenceModel::from_network(ck.net, with_kind(ck.scheme, scheme_override), true);
    } else {
        throw FormatError(model_path.string() + ": not a BTPM model or BTCK checkpoint");
    }
    if (model.spec().task != cfg.task) throw ConfigError("model task does not match the config task");

    const Experiment ex = load_experiment(cfg, false);
    const FinalMetric fm = final_metric(cfg, ex, model);
    out << "| dataset | scheme | metric | value |\n|---|---|---|---|\n";
    const std::string scheme = label(model.scheme().kind);
    const std::string name = fm.name == "top1" ? "top-1 (MAP@1, %)" : "PSNR (dB)";
    out << "| " << ex.dataset << " | " << scheme << " | " << name << " | " << fmt("%.2f", fm.value) << " |\n";
    if (fm.baseline)
        out << "| " << ex.dataset << " | " << fm.baseline_name << " | PSNR (dB) | " << fmt("%.2f", *fm.baseline)
            << " |\n";
}

void cmd_quantize(const fs::path& checkpoint, const fs::path& output, const std::string& scheme_override,
                  std::ostream& out) {
    const std::string magic = nn::file_magic(checkpoint);
    if (magic == "BTPM") throw ConfigError(checkpoint.string() + " is already quantized (BTPM model)");
    if (magic != "BTCK") throw FormatError(checkpoint.string() + ": not a BTCK checkpoint");
    const nn::Checkpoint ck = nn::load_checkpoint(checkpoint);

    QuantScheme scheme = ck.scheme;
    if (scheme.kind == SchemeKind::Full) scheme.kind = SchemeKind::BT;
    scheme = with_kind(scheme, scheme_override);
    if (!scheme.quantizes()) throw ConfigError("scheme 'full' has nothing to quantize");

    const auto model = nn::InferenceModel::from_network(ck.net, scheme, true);
    save_model(output, model);

    const SchemeKind kinds[] = {SchemeKind::Binary, SchemeKind::Ternary, SchemeKind::BT};
    double total_mse[3] = {0, 0, 0};
    std::size_t total_n = 0;
    out << "| layer | shape | BWN mse | TWN mse | BT mse | " << label(scheme.kind)
        << " sparsity | flipped groups | distance to transition |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& p : ck.net.params()) {
        if (!p.quantized) continue;
        const std::size_t n = p.value.numel();
        out << "| " << p.name << " | " << shape_to_string(p.value.shape());
        for (int i = 0; i < 3; ++i) {
            QuantScheme s = scheme;
            s.kind = kinds[i];
            const double mse = diagnostics(p.value, quantize(p.value, s)).mse;
            total_mse[i] += mse * static_cast<double>(n);
            out << " | " << fmt("%.4g", mse);
        }
        const QuantTensor q = quantize(p.value, scheme);
        const auto d = diagnostics(p.value, q);
        out << " | " << fmt("%.3f", d.sparsity) << " | " << q.flipped_bound_groups() << '/' << q.group_count()
            << " | " << fmt("%.4g", mean_distance_to_transition(p.value, q)) << " |\n";
        total_n += n;
    }
    if (total_n == 0) throw ConfigError("checkpoint has no quantizable layers");
    for (double& m : total_mse) m /= static_cast<double>(total_n);
    out << fmt("\nweighted mse: BWN %.4g  TWN %.4g  BT %.4g  (BT < TWN < BWN: %s)\n", total_mse[0],
               total_mse[1], total_mse[2], total_mse[2] < total_mse[1] && total_mse[1] < total_mse[0] ? "yes" : "no");
    const auto packed = model.packed_weight_bytes(), dense = model.dense_weight_bytes();
    out << fmt("quantized weights: %zu bytes packed vs %zu bytes float32 (%.1fx smaller)\n", packed, dense,
               static_cast<double>(dense) / static_cast<double>(packed));
    out << "wrote " << output.string() << " (" << fs::file_size(output) << " bytes)\n";
}

namespace {

template <typename F>
double ns_per_op(F&& f, double min_seconds) {
    using clock = std::chrono::steady_clock;
    f();  // warm-up
    std::size_t iters = 1;
    for (;;) {
        const auto t0 = clock::now();
        for (std::size_t i = 0; i < iters; ++i) f();
        const double s = std::chrono::duration<double>(clock::now() - t0).count();
        if (s >= min_seconds || iters >= (std::size_t{1} << 20)) return s * 1e9 / static_cast<double>(iters);
        iters *= 2;
    }
}

void bench_model(const nn::InferenceModel& model, double min_seconds, std::uint64_t seed, std::ostream& out) {
    const auto shapes = model.spec().activation_shapes();
    Rng rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (std::size_t i = 0; i < model.weights().size(); ++i) {
        const auto* p = std::get_if<PackedQuantTensor>(&model.weights()[i]);
        if (!p) continue;
        const std::string& name = model.names()[i];
        const std::size_t layer = std::stoul(name.substr(5, name.find('.') - 5));
        if (model.spec().layers.at(layer).kind != nn::LayerKind::Conv3x3) continue;
        Shape in{1};
        in.insert(in.end(), shapes[layer].begin(), shapes[layer].end());
        Tensor x(in);
        for (float& v : x.values()) v = normal(rng);
        const Tensor dense = dequantize(unpack(*p));
        float sink = 0.0f;
        const double t_dense = ns_per_op([&] { sink += nn::conv2d(x, dense, nullptr, 1, 1)[0]; }, min_seconds);
        const double t_packed = ns_per_op([&] { sink += packed_conv2d(*p, x, 1, 1)[0]; }, min_seconds);
        out << "| " << label(model.scheme().kind) << " | " << name << " | " << shape_to_string(p->shape) << " | "
            << shape_to_string(x.shape()) << " | " << fmt("%.0f", t_dense) << " | " << fmt("%.0f", t_packed)
            << " | " << fmt("%.2f", t_dense / t_packed) << " |\n";
        if (!std::isfinite(sink)) out << "(non-finite output)\n";
    }
}

}  // namespace

void cmd_bench(const BenchOptions& o, std::ostream& out) {
    if (!(o.min_seconds > 0)) throw ConfigError("--min-time must be positive");
    out << "| scheme | layer | weights | input | dense ns/op | packed ns/op | dense/packed |\n";
    out << "|---|---|---|---|---|---|---|\n";
    if (!o.model.empty()) {
        if (nn::file_magic(o.model) != "BTPM") throw FormatError(o.model.string() + ": not a BTPM model");
        bench_model(load_model(o.model), o.min_seconds, o.seed, out);
        return;
    }
    if (o.k == 0) throw ConfigError("--k must be >= 1");
    const nn::Network net(nn::build_vgg6(o.k), o.seed);
    for (SchemeKind kind : {SchemeKind::Binary, SchemeKind::Ternary, SchemeKind::BT}) {
        QuantScheme s;
        s.kind = kind;
        bench_model(nn::InferenceModel::from_network(net, s, true), o.min_seconds, o.seed, out);
    }
}

std::string format_report(const std::vector<json>& summaries) {
    // Section (task, reg) -> row key (dataset, setting) -> column -> values.
    using Row = std::pair<std::string, double>;
    using Cells = std::map<std::string, std::vector<double>>;
    std::map<std::pair<std::string, bool>, std::map<Row, Cells>> sections;
    std::map<std::pair<std::string, Row>, Cells> plain;  // non-regularized runs, for Full/baselines

    for (const auto& s : summaries) {
        const std::string task = s.at("task").get<std::string>();
        const std::string dataset = s.at("dataset").get<std::string>();
        double setting = 0;
        if (task == "classification") setting = s.at("k").get<double>();
        else if (task == "sr") setting = s.at("scale").get<double>();
        else setting = s.at("sigma").get<double>();
        const Row row{dataset, setting};
        const bool reg = s.value("reg", false);
        const std::string col = label(parse_scheme(s.at("scheme").get<std::string>()));
        auto& cells = sections[{task, reg}][row];
        cells[col].push_back(s.at("metric").get<double>());
        for (const char* b : {"bicubic", "noisy"})
            if (s.contains(b)) cells[b].push_back(s.at(b).get<double>());
        if (!reg) plain[{task, row}] = cells;
    }

    auto cell = [](const Cells& c, const std::string& col) -> std::string {
        const auto it = c.find(col);
        if (it == c.end() || it->second.empty()) return "-";
        double sum = 0;
        for (double v : it->second) sum += v;
        return fmt("%.2f", sum / static_cast<double>(it->second.size()));
    };

    std::string md;
    for (const auto& [key, rows] : sections) {
        const auto& [task, reg] = key;
        std::vector<std::string> cols;
        std::string title, setting;
        if (task == "classification") {
            title = "Top-1 accuracy (MAP@1, %)";
            setting = "K";
        } else if (task == "sr") {
            title = "Super-resolution PSNR (dB)";
            setting = "Scale";
            cols.push_back("bicubic");
        } else {
            title = "Denoising PSNR (dB)";
            setting = "Sigma";
            cols.push_back("noisy");
        }
        for (const char* c : {"Full", "BWN", "TWN", "BT"}) cols.emplace_back(c);
        if (reg) title += ", with transition regularization";

        if (!md.empty()) md += '\n';
        md += "### " + title + "\n\n| Dataset | " + setting + " |";
        for (const auto& c : cols) md += ' ' + (c == "bicubic" ? std::string("Bicubic") : c == "noisy" ? std::string("Noisy") : c) + " |";
        md += "\n|---|---|";
        for (std::size_t i = 0; i < cols.size(); ++i) md += "---|";
        md += '\n';
        for (const auto& [row, cells] : rows) {
            const std::string rv = task == "sr" ? fmt("x%g", row.second) : fmt("%g", row.second);
            md += "| " + row.first + " | " + rv + " |";
            const auto base = plain.find({task, row});
            for (const auto& c : cols) {
                std::string v = cell(cells, c);
                // Full precision runs carry no regularizer; reuse the plain run.
                if (v == "-" && reg && base != plain.end() && (c == "Full" || c == "bicubic" || c == "noisy"))
                    v = cell(base->second, c);
                md += ' ' + v + " |";
            }
            md += '\n';
        }
    }
    return md;
}

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& output, std::ostream& out) {
    std::vector<json> summaries;
    for (const auto& dir : run_dirs) summaries.push_back(read_json_file(dir / "summary.json"));
    const std::string md = format_report(summaries);
    if (!output.empty()) write_text(output, md);
    out << md;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Binary/ternary weight quantization experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir, scheme, model, resume, report_out, checkpoint;
    std::optional<std::uint64_t> seed;
    std::size_t stop_after = 0;
    BenchOptions bench;
    std::vector<std::string> runs;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run config")->required();
        sub->add_option("--seed", seed, "Override the config seed");
        sub->add_option("--out", out_dir, "Override the output directory");
        sub->add_option("--scheme", scheme, "Override the scheme (full|bwn|twn|bt)");
    };
    auto* train = app.add_subcommand("train", "Train a network and write its run directory");
    add_common(train);
    train->add_option("--resume", resume, "Continue from a BTCK checkpoint");
    train->add_option("--stop-after", stop_after, "Stop once this many epochs are complete");

    auto* eval = app.add_subcommand("eval", "Evaluate a model on the config's test split");
    add_common(eval);
    eval->add_option("--model", model, "BTPM model or BTCK checkpoint")->required();

    auto* quant = app.add_subcommand("quantize", "Pack a checkpoint into a BTPM model");
    quant->add_option("checkpoint", checkpoint, "BTCK checkpoint")->required();
    quant->add_option("--out", out_dir, "Output BTPM file")->required();
    quant->add_option("--scheme", scheme, "Scheme to pack with (default: the checkpoint's, or bt)");

    auto* bench_cmd = app.add_subcommand("bench", "Dense vs packed convolution throughput");
    bench_cmd->add_option("--model", bench.model, "BTPM model (default: synthetic VGG-6)");
    bench_cmd->add_option("--k", bench.k, "Width of the synthetic VGG-6");
    bench_cmd->add_option("--min-time", bench.min_seconds, "Seconds per measurement");
    bench_cmd->add_option("--seed", bench.seed, "Input and weight seed");

    auto* report = app.add_subcommand("report", "Markdown tables over finished runs");
    report->add_option("runs", runs, "Run directories")->required();
    report->add_option("--out", report_out, "Also write the tables to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    auto load = [&] {
        RunConfig cfg = load_config(config_path);
        if (seed) {
            cfg.seed = *seed;
            cfg.augment.seed = *seed;
        }
        if (!out_dir.empty()) cfg.out = out_dir;
        cfg.scheme = with_kind(cfg.scheme, scheme);
        cfg.validate();
        return cfg;
    };

    try {
        if (*train) cmd_train(load(), {resume, stop_after}, out);
        else if (*eval) cmd_eval(load(), model, scheme, out);
        else if (*quant) cmd_quantize(checkpoint, out_dir, scheme, out);
        else if (*bench_cmd) cmd_bench(bench, out);
        else if (*report) cmd_report({runs.begin(), runs.end()}, report_out, out);
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace bt::cli
