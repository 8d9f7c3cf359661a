#include "bt/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "bt/data/image.hpp"
#include "bt/data/pairs.hpp"
#include "bt/error.hpp"

namespace bt::nn {

namespace {

constexpr double kPsnrCap = 100.0;

Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(epoch)};
    return Rng(seq);
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
    Shape shape = t.shape();
    const std::size_t row = t.numel() / shape[0];
    shape[0] = rows.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(t.data() + rows[i] * row, row, out.data() + i * row);
    return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
    const std::size_t k = logits.dim(1);
    const float* p = logits.data() + r * k;
    return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

std::string snapshot(std::size_t epoch, std::size_t batch, float lr, double loss,
                     const QuantScheme& scheme, const std::string& reason) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["batch"] = batch;
    j["lr"] = lr;
    j["loss"] = std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json(std::to_string(loss));
    j["scheme"] = std::string(scheme_name(scheme.kind));
    j["reason"] = reason;
    return j.dump();
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw InvalidInput("epochs must be positive");
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    if (!(adam.lr > 0.0f) || !std::isfinite(adam.lr)) throw InvalidInput("learning rate must be positive");
    if (!(adam.beta1 >= 0.0f && adam.beta1 < 1.0f) || !(adam.beta2 >= 0.0f && adam.beta2 < 1.0f))
        throw InvalidInput("Adam betas must lie in [0, 1)");
    if (!(schedule.factor > 0.0f)) throw InvalidInput("decay factor must be positive");
    for (double m : schedule.milestones)
        if (!(m >= 0.0 && m <= 1.0)) throw InvalidInput("milestones are fractions in [0, 1]");
    if (!(ste_clip > 0.0f)) throw InvalidInput("STE clip must be positive");
    scheme.validate();
    reg.validate();
    if (reg.enabled && !scheme.quantizes())
        throw InvalidInput("transition regularization requires a quantized scheme");
}

void TrainData::validate(Task task) const {
    if (size() == 0) throw InvalidInput("dataset is empty");
    if (task == Task::Classification) {
        if (labels.size() != size()) throw InvalidInput("label count does not match inputs");
    } else if (targets.empty() || targets.dim(0) != size()) {
        throw InvalidInput("target count does not match inputs");
    }
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    if (t.rank() == 0 || begin > end || end > t.dim(0)) throw InvalidInput("slice_rows: bad range");
    Shape shape = t.shape();
    const std::size_t row = t.numel() / shape[0];
    shape[0] = end - begin;
    return Tensor(shape, std::vector<float>(t.data() + begin * row, t.data() + end * row));
}

std::vector<LayerQuantStats> layer_quant_stats(const Network& net, const QuantScheme& scheme) {
    std::vector<LayerQuantStats> out;
    if (!scheme.quantizes()) return out;
    for (const auto& p : net.params()) {
        if (!p.quantized) continue;
        const QuantTensor q = quantize(p.value, scheme);
        out.push_back({p.name, diagnostics(p.value, q).mse, mean_distance_to_transition(p.value, q)});
    }
    return out;
}

EvalResult evaluate(const InferenceModel& model, const TrainData& data, std::size_t batch_size) {
    const Task task = model.spec().task;
    data.validate(task);
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    const bool cls = task == Task::Classification;
    double loss = 0.0, metric = 0.0;
    for (std::size_t b = 0; b < data.size(); b += batch_size) {
        const std::size_t e = std::min(data.size(), b + batch_size);
        const Tensor x = slice_rows(data.inputs, b, e);
        Tensor y = model.forward(x, cls);
        if (cls) {
            const auto labels = std::span<const std::int32_t>(data.labels).subspan(b, e - b);
            loss += softmax_cross_entropy(y, labels).loss * static_cast<double>(e - b);
            for (std::size_t r = 0; r < e - b; ++r)
                if (argmax_row(y, r) == static_cast<std::size_t>(labels[r])) metric += 1.0;
        } else {
            for (float& v : y.values()) v = std::clamp(v, 0.0f, 1.0f);
            const Tensor t = slice_rows(data.targets, b, e);
            loss += mse_loss(y, t).loss * static_cast<double>(e - b);
            for (std::size_t r = 0; r < e - b; ++r)
                metric += std::min(kPsnrCap, data::psnr(slice_rows(y, r, r + 1), slice_rows(t, r, r + 1)));
        }
    }
    const auto n = static_cast<double>(data.size());
    return {loss / n, metric / n};
}

double evaluate_sr_images(const InferenceModel& model, const std::vector<Tensor>& images, std::size_t scale) {
    if (images.empty()) throw InvalidInput("no evaluation images");
    if (scale < 2) throw InvalidInput("SR evaluation needs scale >= 2");
    double total = 0.0;
    for (const auto& img : images) {
        const Tensor hr = data::crop_to_multiple(img, scale);
        const std::size_t h = hr.dim(1), w = hr.dim(2);
        Tensor lr = data::resize_bicubic(hr, h / scale, w / scale, true);
        for (float& v : lr.values()) v = std::clamp(v, 0.0f, 1.0f);
        Tensor out = model.forward(lr.reshaped({1, 1, h / scale, w / scale}));
        for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
        total += std::min(kPsnrCap, data::psnr_shaved(out.reshaped({1, h, w}), hr, scale));
    }
    return total / static_cast<double>(images.size());
}

double evaluate_denoise_images(const InferenceModel& model, const std::vector<Tensor>& images, float sigma,
                               Rng& rng, double* noisy_psnr) {
    if (images.empty()) throw InvalidInput("no evaluation images");
    double total = 0.0, noisy_total = 0.0;
    for (const auto& img : images) {
        const Tensor noisy = data::add_clipped_noise(img, sigma, rng);
        noisy_total += std::min(kPsnrCap, data::psnr(noisy, img));
        Tensor out = model.forward(noisy.reshaped({1, 1, img.dim(1), img.dim(2)}));
        for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
        total += std::min(kPsnrCap, data::psnr(out.reshaped(img.shape()), img));
    }
    const auto n = static_cast<double>(images.size());
    if (noisy_psnr) *noisy_psnr = noisy_total / n;
    return total / n;
}

TrainResult train(Network& net, const TrainData& data, const TrainData* val, const TrainConfig& config,
                  const EpochCallback& on_epoch, OptimState* resume, std::size_t start_epoch) {
    config.validate();
    const Task task = net.spec().task;
    data.validate(task);
    if (val) val->validate(task);
    const bool cls = task == Task::Classification;

    TrainResult result;
    result.optim = resume ? *resume : OptimState::for_params(net.params(), config.adam);
    result.optim.config = config.adam;
    result.optim.validate(net.params());

    ForwardOptions fwd;
    fwd.logits_only = cls;
    const std::size_t end = config.stop_after ? std::min(config.stop_after, config.epochs) : config.epochs;
    for (std::size_t epoch = start_epoch; epoch < end; ++epoch) {
        result.optim.lr = step_decay_lr(config.adam.lr, epoch, config.epochs, config.schedule);
        Rng order_rng = stream_rng(config.seed, 1, epoch);
        Rng aug_rng = stream_rng(config.augment.seed ^ config.seed, 2, epoch);
        Rng reg_rng = stream_rng(config.reg.rng_seed ^ config.seed, 3, epoch);

        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (config.shuffle) std::shuffle(order.begin(), order.end(), order_rng);

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = result.optim.lr;
        std::size_t batches = 0, correct = 0;
        double metric_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            const std::size_t e = std::min(order.size(), b + config.batch_size);
            const auto rows = std::span<const std::size_t>(order).subspan(b, e - b);
            Tensor x = gather_rows(data.inputs, rows);
            if (config.augment.any()) x = data::augment(x, config.augment, aug_rng);

            ForwardCache cache;
            Tensor y;
            try {
                y = forward(net, x, config.scheme, Mode::Train, &cache, fwd);
            } catch (const InvalidInput& err) {
                if (std::string(err.what()).find("non-finite") == std::string::npos) throw;
                throw DivergenceError(err.what(), snapshot(epoch, batches, m.lr, NAN, config.scheme, err.what()));
            }
            LossResult loss;
            if (cls) {
                std::vector<std::int32_t> labels;
                for (auto r : rows) labels.push_back(data.labels[r]);
                loss = softmax_cross_entropy(y, labels);
                for (std::size_t r = 0; r < rows.size(); ++r)
                    if (argmax_row(y, r) == static_cast<std::size_t>(labels[r])) ++correct;
            } else {
                loss = mse_loss(y, gather_rows(data.targets, rows));
                metric_sum += psnr_from_mse(loss.loss);
            }
            if (!std::isfinite(loss.loss))
                throw DivergenceError("training loss is not finite",
                                      snapshot(epoch, batches, m.lr, loss.loss, config.scheme, "loss"));

            std::vector<Tensor> grads = backward_ste(net, cache, loss.grad, config.ste_clip);
            if (config.reg.enabled) {
                const RegularizedLoss r =
                    loss_with_regularization(loss.loss, net, config.scheme, config.reg, reg_rng, config.ste_clip);
                m.penalty += r.penalty;
                for (std::size_t i = 0; i < r.grads.size(); ++i)
                    for (std::size_t j = 0; j < r.grads[i].numel(); ++j) grads[i][j] += r.grads[i][j];
            }
            adam_step(net.params(), grads, result.optim);
            m.train_loss += loss.loss;
            ++batches;
        }
        m.train_loss /= static_cast<double>(batches);
        m.penalty /= static_cast<double>(batches);
        m.train_metric = cls ? static_cast<double>(correct) / static_cast<double>(data.size())
                             : metric_sum / static_cast<double>(batches);

        m.layers = layer_quant_stats(net, config.scheme);
        double dist = 0.0, weight = 0.0;
        for (std::size_t i = 0, l = 0; i < net.params().size(); ++i) {
            if (!net.params()[i].quantized || !config.scheme.quantizes()) continue;
            const auto n = static_cast<double>(net.params()[i].value.numel());
            dist += m.layers[l++].mean_distance_to_transition * n;
            weight += n;
        }
        m.mean_distance_to_transition = weight > 0.0 ? dist / weight : 0.0;

        if (val) {
            const EvalResult ev = evaluate(InferenceModel::from_network(net, config.scheme, true), *val);
            m.has_val = true;
            m.val_loss = ev.loss;
            m.val_metric = ev.metric;
        }
        if (on_epoch) on_epoch(m);
        result.history.push_back(std::move(m));
    }
    if (resume) *resume = result.optim;
    return result;
}

}  // namespace bt::nn
