#pragma once

// Command implementations behind the `gabornet` executable. Each takes a
// plain options struct so it can be driven without argument parsing.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "gabornet/errors.hpp"
#include "gabornet/metrics.hpp"
#include "gabornet/pgm.hpp"
#include "gabornet/synthgen.hpp"
#include "gabornet/trainer.hpp"
#include "gabornet/unet.hpp"
#include "gabornet/wavefield.hpp"

namespace gabornet::cli {

// Shuffle stream salt so init and shuffle never share a derived seed.
inline constexpr std::uint64_t kShuffleSalt = 0x5348554646ULL;

struct GenOptions {
    std::size_t m = 0;
    std::size_t n = 0;
    double wavelength = 658e-9;
    double pitch = 5.5e-6;
    double z = 0.065;
    std::size_t nmin = 1;
    std::optional<std::size_t> nmax;  // default n*n/10
    double valfrac = 0.15;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    std::filesystem::path out;
};

inline DatasetConfig dataset_config(const GenOptions& o) {
    DatasetConfig c;
    c.m = o.m;
    c.n = o.n;
    c.n_points_min = o.nmin;
    c.n_points_max = o.nmax.value_or(std::max<std::size_t>(1, o.n * o.n / 10));
    c.params.wavelength = o.wavelength;
    c.params.pixel_pitch = o.pitch;
    c.params.n = o.n;
    c.params.z = o.z;
    c.master_seed = o.seed;
    c.validation_fraction = o.valfrac;
    return c;
}

inline int cmd_gen(const GenOptions& o, std::ostream& out) {
    const DatasetConfig config = dataset_config(o);
    const DatasetManifest m = build_dataset(config, o.out, o.jobs);
    const std::size_t n_val = m.split(Split::validation).size();
    out << "optics: lambda=" << config.params.wavelength << " pitch=" << config.params.pixel_pitch
        << " z=" << config.params.z << "\n";
    out << "manifest: " << (o.out / "manifest.json").string() << "\n"
        << "triplets: " << m.entries.size() << " (train " << m.entries.size() - n_val << ", validation " << n_val
        << ")\n";
    return 0;
}

struct TrainOptions {
    std::filesystem::path data;
    std::size_t size = 0;
    std::size_t depth = 0;
    std::size_t base = 16;
    std::size_t epochs = 70;
    double lr = 0.1;
    std::size_t batch = 4;
    std::string target = "hologram";
    std::uint64_t seed = 0;
    std::size_t ckpt_every = 0;
    std::filesystem::path out;
    bool single_precision = false;
};

inline TrainConfig train_config(const TrainOptions& o) {
    TrainConfig c;
    c.dataset_manifest = o.data;
    c.unet.input_size = o.size;
    c.unet.depth = o.depth;
    c.unet.base_channels = o.base;
    c.unet.seed = o.seed;
    c.epochs = o.epochs;
    c.learning_rate = o.lr;
    c.batch_size = o.batch;
    c.target_mode = parse_target_mode(o.target);
    c.shuffle_seed = o.seed ^ kShuffleSalt;
    c.checkpoint_every = o.ckpt_every;
    c.output_dir = o.out;
    return c;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
    TrainConfig config = train_config(o);
    config.on_epoch = [&out](const EpochRecord& r) {
        out << "epoch " << r.epoch << " train_mse=" << format_double(r.train_mse)
            << " val_mse=" << format_double(r.val_mse) << " seconds=" << format_double(r.seconds) << std::endl;
    };
    if (o.single_precision) {
        train<float>(config);
    } else {
        train<double>(config);
    }
    out << "checkpoint: " << (o.out / "ckpt_final.gfnc").string() << "\n";
    return 0;
}

struct ReconstructOptions {
    std::filesystem::path in;
    std::filesystem::path out;
    double wavelength = 658e-9;
    double pitch = 5.5e-6;
    double z = 0.065;
};

inline int cmd_reconstruct(const ReconstructOptions& o) {
    if (!(o.z > 0.0)) throw ParameterError("--z must be > 0 for reconstruction");
    const RealImage input = read_pgm(o.in);
    if (!is_power_of_two(input.n()) || input.n() < 2) {
        throw DimensionError("input side " + std::to_string(input.n()) + " px is not a power of two >= 2");
    }
    PropagationParams params;
    params.wavelength = o.wavelength;
    params.pixel_pitch = o.pitch;
    params.n = input.n();
    params.z = o.z;
    write_pgm16(o.out, max_normalized(reconstruct_hologram(input, params)));
    return 0;
}

struct PredictOptions {
    std::filesystem::path ckpt;
    std::filesystem::path in;
    std::filesystem::path out;
};

/// Network output for a PGM input, before output normalization. The input is
/// max-normalized first, matching the dataset convention.
inline RealImage predict_file(const Checkpoint<double>& ck, const std::filesystem::path& in) {
    const RealImage input = read_pgm(in);
    if (input.n() != ck.config.input_size) {
        throw DimensionError("input is " + std::to_string(input.n()) + " px; checkpoint expects " +
                             std::to_string(ck.config.input_size) + "x" + std::to_string(ck.config.input_size));
    }
    return predict(ck.config, ck.params, max_normalized(input));
}

inline int cmd_predict(const PredictOptions& o) {
    const auto ck = load_checkpoint<double>(o.ckpt);
    write_pgm16(o.out, max_normalized(predict_file(ck, o.in)));
    return 0;
}

struct EvalOptions {
    std::filesystem::path a;
    std::filesystem::path b;
    std::optional<std::filesystem::path> out;
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
    const MetricsReport r = compare_images(read_pgm(o.a), read_pgm(o.b));
    out << metrics_line(r) << "\n";
    if (o.out) {
        std::ofstream f(*o.out, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + o.out->string());
        f << metrics_csv(r);
        if (!f) throw IoError("write failed: " + o.out->string());
    }
    return 0;
}

} // namespace gabornet::cli
