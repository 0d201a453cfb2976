#pragma once

// Training and evaluation on a dataset written by build_dataset.
//
// Each epoch shuffles the training entries with a stream seeded by
// derive_seed(shuffle_seed, epoch), runs plain SGD over consecutive batches
// (the last partial batch included), then scores the validation split with
// the parameters frozen. Reported train loss is the unweighted mean of the
// per-batch losses.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gabornet/errors.hpp"
#include "gabornet/pgm.hpp"
#include "gabornet/random.hpp"
#include "gabornet/synthgen.hpp"
#include "gabornet/unet.hpp"
#include "gabornet/wavefield.hpp"

namespace gabornet {

/// What the network learns to output from I: H (direct problem) or A (inverse).
enum class TargetMode { hologram, generating };

inline const char* target_mode_name(TargetMode m) { return m == TargetMode::hologram ? "hologram" : "generating"; }

inline TargetMode parse_target_mode(const std::string& s) {
    if (s == "hologram") return TargetMode::hologram;
    if (s == "generating") return TargetMode::generating;
    throw ParameterError("target must be 'hologram' or 'generating', got '" + s + "'");
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double seconds = 0.0;
};

struct LossHistory {
    std::vector<EpochRecord> records;

    /// Same epochs and bit-identical losses; timings are ignored.
    bool same_losses(const LossHistory& other) const {
        if (records.size() != other.records.size()) return false;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& a = records[i];
            const auto& b = other.records[i];
            if (a.epoch != b.epoch || a.train_mse != b.train_mse || a.val_mse != b.val_mse) return false;
        }
        return true;
    }
};

inline std::string format_double(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string history_csv(const LossHistory& h) {
    std::string out = "epoch,train_mse,val_mse,seconds\n";
    for (const auto& r : h.records) {
        out += std::to_string(r.epoch) + "," + format_double(r.train_mse) + "," + format_double(r.val_mse) + "," +
               format_double(r.seconds) + "\n";
    }
    return out;
}

struct TrainConfig {
    std::filesystem::path dataset_manifest;  // manifest.json or its directory
    UNetConfig unet{};
    std::size_t epochs = 70;
    double learning_rate = 0.1;
    std::size_t batch_size = 4;
    TargetMode target_mode = TargetMode::hologram;
    std::uint64_t shuffle_seed = 0;
    std::size_t checkpoint_every = 0;    // 0: final checkpoint only
    std::filesystem::path output_dir;    // empty: nothing written to disk
    std::function<void(const EpochRecord&)> on_epoch;

    void validate() const {
        if (epochs < 1) throw ParameterError("epochs must be >= 1");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw ParameterError("learning rate must be finite and >= 0");
        }
        if (batch_size < 1) throw ParameterError("batch size must be >= 1");
        unet.validate();
    }
};

/// Input/target pairs of one split, held in memory as flat S*S planes.
template <typename T>
struct SampleSet {
    std::size_t side = 0;
    std::vector<std::size_t> indices;  // manifest indices, manifest order
    std::vector<std::vector<T>> inputs;
    std::vector<std::vector<T>> targets;

    std::size_t size() const { return inputs.size(); }
};

template <typename T>
std::vector<T> image_values(const RealImage& img) {
    return std::vector<T>(img.values().begin(), img.values().end());
}

template <typename T = double>
SampleSet<T> load_samples(const DatasetManifest& manifest, Split split, TargetMode mode) {
    SampleSet<T> set;
    set.side = manifest.config.n;
    for (const ManifestEntry* e : manifest.split(split)) {
        const RealImage input = read_pgm(manifest.root / e->i_path);
        const RealImage target = read_pgm(manifest.root / (mode == TargetMode::hologram ? e->h_path : e->a_path));
        if (input.n() != set.side || target.n() != set.side) {
            throw ConfigError("image size disagrees with manifest for entry " + std::to_string(e->index));
        }
        set.indices.push_back(e->index);
        set.inputs.push_back(image_values<T>(input));
        set.targets.push_back(image_values<T>(target));
    }
    return set;
}

namespace detail {

template <typename T>
Tensor4<T> stack(const std::vector<std::vector<T>>& planes, std::span<const std::size_t> order, std::size_t side) {
    Tensor4<T> t(order.size(), 1, side, side);
    for (std::size_t b = 0; b < order.size(); ++b) {
        const auto& p = planes[order[b]];
        std::copy(p.begin(), p.end(), t.sample(b));
    }
    return t;
}

} // namespace detail

/// Mean per-entry MSE over the set, in set order. Parameters are not modified.
template <typename T>
double validate(const UNetConfig& config, const Parameters<T>& params, const SampleSet<T>& set,
                std::size_t chunk = 8) {
    if (set.size() == 0) throw ConfigError("validation split is empty");
    if (set.side != config.input_size) {
        throw ConfigError("network input size " + std::to_string(config.input_size) + " != image side " +
                          std::to_string(set.side));
    }
    std::vector<double> per_entry(set.size());
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t plane = set.side * set.side;
    for (std::size_t start = 0; start < set.size(); start += chunk) {
        const std::size_t count = std::min(chunk, set.size() - start);
        const std::span<const std::size_t> ids(order.data() + start, count);
        const auto out = unet_forward(config, params, detail::stack(set.inputs, ids, set.side)).output;
        for (std::size_t b = 0; b < count; ++b) {
            const T* p = out.sample(b);
            const auto& t = set.targets[ids[b]];
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
                acc += d * d;
            }
            per_entry[start + b] = acc / static_cast<double>(plane);
        }
    }
    double sum = 0.0;
    for (double v : per_entry) sum += v;
    return sum / static_cast<double>(per_entry.size());
}

template <typename T>
double validate(const UNetConfig& config, const Parameters<T>& params, const DatasetManifest& manifest,
                TargetMode mode) {
    return validate(config, params, load_samples<T>(manifest, Split::validation, mode));
}

/// Single forward pass on one image; the ReLU head keeps the output >= 0.
template <typename T>
RealImage predict(const UNetConfig& config, const Parameters<T>& params, const RealImage& interferogram) {
    if (interferogram.n() != config.input_size) {
        throw DimensionError("input image is " + std::to_string(interferogram.n()) + " px, network expects " +
                             std::to_string(config.input_size));
    }
    Tensor4<T> x(1, 1, config.input_size, config.input_size);
    std::copy(interferogram.values().begin(), interferogram.values().end(), x.data());
    const auto out = unet_forward(config, params, x).output;
    std::vector<double> values(out.values().begin(), out.values().end());
    return RealImage(config.input_size, std::move(values));
}

template <typename T>
struct TrainResult {
    Parameters<T> params;
    LossHistory history;
    std::vector<std::filesystem::path> checkpoints;
};

inline std::string checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%04zu.gfnc", epoch);
    return buf;
}

/// Runs the fixed-epoch SGD loop on preloaded samples.
template <typename T>
TrainResult<T> train_on(const TrainConfig& config, const SampleSet<T>& train_set, const SampleSet<T>& val_set) {
    namespace fs = std::filesystem;
    config.validate();
    if (train_set.size() == 0) throw ConfigError("training split is empty");
    if (train_set.side != config.unet.input_size) {
        throw ConfigError("network input size " + std::to_string(config.unet.input_size) +
                          " does not match dataset image side " + std::to_string(train_set.side));
    }
    if (!config.output_dir.empty()) {
        std::error_code ec;
        fs::create_directories(config.output_dir, ec);
        if (!fs::is_directory(config.output_dir)) throw IoError("cannot create directory: " + config.output_dir.string());
    }

    TrainResult<T> result{init_parameters<T>(config.unet, config.unet.seed), {}, {}};
    auto& params = result.params;
    const T lr = static_cast<T>(config.learning_rate);
    std::vector<std::size_t> order(train_set.size());

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Random rng(derive_seed(config.shuffle_seed, epoch));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            const std::span<const std::size_t> ids(order.data() + start, count);
            const auto x = detail::stack(train_set.inputs, ids, train_set.side);
            const auto y = detail::stack(train_set.targets, ids, train_set.side);
            auto fwd = unet_forward(config.unet, params, x);
            const auto loss = mse_loss(fwd.output, y);
            if (!std::isfinite(static_cast<double>(loss.loss))) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batches + 1));
            }
            unet_backward(config.unet, params, fwd.cache, loss.grad);
            sgd_step(params, lr);
            loss_sum += static_cast<double>(loss.loss);
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_mse = loss_sum / static_cast<double>(batches);
        rec.val_mse = val_set.size() > 0 ? validate(config.unet, params, val_set) : 0.0;
        if (!std::isfinite(rec.val_mse)) {
            throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.records.push_back(rec);
        if (config.on_epoch) config.on_epoch(rec);

        if (!config.output_dir.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
            const fs::path p = config.output_dir / checkpoint_name(epoch);
            save_checkpoint(p, config.unet, params);
            result.checkpoints.push_back(p);
        }
    }

    if (!config.output_dir.empty()) {
        const fs::path final_path = config.output_dir / "ckpt_final.gfnc";
        save_checkpoint(final_path, config.unet, params);
        result.checkpoints.push_back(final_path);
        const fs::path csv = config.output_dir / "history.csv";
        std::ofstream out(csv, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + csv.string());
        out << history_csv(result.history);
        if (!out) throw IoError("write failed: " + csv.string());
    }
    return result;
}

/// Reads the manifest, checks sizes, loads both splits and trains.
template <typename T = double>
TrainResult<T> train(const TrainConfig& config) {
    config.validate();
    const DatasetManifest manifest = read_manifest(config.dataset_manifest);
    if (manifest.config.n != config.unet.input_size) {
        throw ConfigError("network input size " + std::to_string(config.unet.input_size) +
                          " does not match dataset image side " + std::to_string(manifest.config.n));
    }
    const auto train_set = load_samples<T>(manifest, Split::train, config.target_mode);
    const auto val_set = load_samples<T>(manifest, Split::validation, config.target_mode);
    return train_on(config, train_set, val_set);
}

} // namespace gabornet
