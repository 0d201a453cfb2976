#pragma once

// Synthetic (A, I, H) triplets:
//   A = lowpass_circular(random sparse points)          generating image
//   I = |propagate(A, -z)|                              interferogram
//   H = |propagate(I, +z)|                              magnitude hologram
// each max-normalized to peak 1, and the on-disk dataset built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gabornet/errors.hpp"
#include "gabornet/pgm.hpp"
#include "gabornet/random.hpp"
#include "gabornet/wavefield.hpp"

namespace gabornet {

inline constexpr int kManifestFormatVersion = 1;
// Salt for the stream that assigns train/validation splits.
inline constexpr std::uint64_t kSplitSalt = 0x53504C4954ULL;

struct DatasetConfig {
    std::size_t m = 1;
    std::size_t n = 64;
    std::size_t n_points_min = 1;
    std::size_t n_points_max = 1;
    PropagationParams params{};  // params.z is a magnitude; signs are applied per stage
    std::uint64_t master_seed = 0;
    double validation_fraction = 0.15;

    std::size_t validation_count() const {
        return static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(m)));
    }

    void validate() const {
        if (m < 1) throw ParameterError("dataset size m must be >= 1");
        if (n < 2 || !is_power_of_two(n)) throw DimensionError("image side must be a power of two >= 2");
        if (n_points_min < 1 || n_points_min > n_points_max || n_points_max > n * n) {
            throw ParameterError("point counts must satisfy 1 <= nmin <= nmax <= n*n");
        }
        if (!(validation_fraction >= 0.0) || !(validation_fraction < 1.0)) {
            throw ParameterError("validation fraction must lie in [0, 1)");
        }
        if (validation_count() >= m) throw ParameterError("validation split would leave no training entries");
        if (params.n != n) throw DimensionError("propagation grid does not match image side");
        params.validate();
        if (!(params.z > 0.0)) throw ParameterError("distance z must be > 0");
    }
};

/// Config with the default optics (658 nm, 5.5 um, 65 mm) and nmax = n^2/10.
inline DatasetConfig default_dataset_config(std::size_t m, std::size_t n, std::uint64_t seed) {
    DatasetConfig c;
    c.m = m;
    c.n = n;
    c.n_points_min = 1;
    c.n_points_max = std::max<std::size_t>(1, n * n / 10);
    c.params.n = n;
    c.master_seed = seed;
    return c;
}

struct ImageTriplet {
    RealImage a;
    RealImage i;
    RealImage h;
    std::uint64_t seed = 0;
    std::size_t n_points = 0;
};

enum class Split { train, validation };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "validation"; }

struct ManifestEntry {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::size_t n_points = 0;
    Split split = Split::train;
    std::string a_path;
    std::string i_path;
    std::string h_path;
};

struct DatasetManifest {
    DatasetConfig config;
    std::string prng_name = kPrngName;
    std::vector<ManifestEntry> entries;
    std::filesystem::path root;  // directory holding manifest.json; not serialized

    std::vector<const ManifestEntry*> split(Split s) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries) {
            if (e.split == s) out.push_back(&e);
        }
        return out;
    }
};

/// Log-spaced source-point counts from nmin to nmax, rounded and clamped.
inline std::vector<std::size_t> point_counts(const DatasetConfig& config) {
    std::vector<std::size_t> counts(config.m, config.n_points_min);
    if (config.m == 1) return counts;
    const double lo = std::log(static_cast<double>(config.n_points_min));
    const double hi = std::log(static_cast<double>(config.n_points_max));
    for (std::size_t j = 0; j < config.m; ++j) {
        const double t = static_cast<double>(j) / static_cast<double>(config.m - 1);
        const auto v = static_cast<std::size_t>(std::llround(std::exp(lo + t * (hi - lo))));
        counts[j] = std::clamp(v, config.n_points_min, config.n_points_max);
    }
    return counts;
}

/// n_points sources at uniform random pixels (with replacement, later draw
/// wins) with brightness uniform on (0, 1], on a zero background.
inline RealImage generate_source_image(std::size_t n, std::size_t n_points, std::uint64_t seed) {
    if (n == 0) throw DimensionError("image side must be >= 1");
    if (n_points < 1 || n_points > n * n) throw ParameterError("n_points must lie in [1, n*n]");
    std::vector<double> pixels(n * n, 0.0);
    Random rng(seed);
    for (std::size_t p = 0; p < n_points; ++p) {
        const auto row = static_cast<std::size_t>(rng.below(n));
        const auto col = static_cast<std::size_t>(rng.below(n));
        pixels[row * n + col] = rng.uniform_open_closed();
    }
    return RealImage(n, std::move(pixels));
}

/// True when frequency sample (row, col) lies inside the disk of radius
/// sqrt(2) n / 4 around DC (boundary included). Evaluated as 8 d^2 <= n^2.
constexpr bool inside_aperture(std::size_t row, std::size_t col, std::size_t n) noexcept {
    const long fr = frequency_index(row, n);
    const long fc = frequency_index(col, n);
    const auto n_l = static_cast<long>(n);
    return 8 * (fr * fr + fc * fc) <= n_l * n_l;
}

/// Ideal circular low-pass in the Fourier plane; negatives clamped to zero.
inline RealImage lowpass_circular(const RealImage& image) {
    const std::size_t n = image.n();
    ComplexField spectrum = dft2(lift(image), Direction::forward);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            if (!inside_aperture(r, c, n)) spectrum.at(r, c) = 0.0;
        }
    }
    const ComplexField filtered = dft2(spectrum, Direction::inverse);
    std::vector<double> out(filtered.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::max(0.0, filtered.values()[k].real());
    return RealImage(n, std::move(out));
}

/// I = |propagate(A, -z)|. params.z is the (positive) distance magnitude.
inline RealImage synth_interferogram(const RealImage& a, const PropagationParams& params) {
    if (!(params.z > 0.0)) throw ParameterError("distance magnitude z must be > 0");
    if (a.n() != params.n) throw DimensionError("generating image side does not match propagation grid");
    return rectify(propagate(lift(a), params.with_z(-params.z)));
}

inline ImageTriplet synth_triplet(std::size_t n_points, std::uint64_t seed, const DatasetConfig& config) {
    RealImage a = max_normalized(lowpass_circular(generate_source_image(config.n, n_points, seed)));
    RealImage i = max_normalized(synth_interferogram(a, config.params));
    RealImage h = max_normalized(reconstruct_hologram(i, config.params));
    return ImageTriplet{std::move(a), std::move(i), std::move(h), seed, n_points};
}

/// Seed of triplet j in a dataset with the given master seed.
inline std::uint64_t triplet_seed(std::uint64_t master_seed, std::size_t index) {
    return derive_seed(master_seed, index);
}

/// Validation flags per index: a seeded permutation of [0, m) whose last
/// round(fraction * m) positions are marked validation.
inline std::vector<Split> assign_splits(const DatasetConfig& config) {
    std::vector<std::size_t> order(config.m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Random rng(derive_seed(config.master_seed ^ kSplitSalt, 0));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<Split> splits(config.m, Split::train);
    const std::size_t n_val = config.validation_count();
    for (std::size_t k = config.m - n_val; k < config.m; ++k) splits[order[k]] = Split::validation;
    return splits;
}

// ---- manifest (de)serialization ---------------------------------------------

inline nlohmann::ordered_json to_json(const DatasetConfig& c) {
    nlohmann::ordered_json j;
    j["m"] = c.m;
    j["n"] = c.n;
    j["n_points_min"] = c.n_points_min;
    j["n_points_max"] = c.n_points_max;
    j["wavelength"] = c.params.wavelength;
    j["pixel_pitch"] = c.params.pixel_pitch;
    j["z"] = c.params.z;
    j["master_seed"] = c.master_seed;
    j["validation_fraction"] = c.validation_fraction;
    return j;
}

inline nlohmann::ordered_json to_json(const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["format_version"] = kManifestFormatVersion;
    j["config"] = to_json(m.config);
    j["prng_name"] = m.prng_name;
    auto& entries = j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"index", e.index},
                           {"seed", e.seed},
                           {"n_points", e.n_points},
                           {"split", split_name(e.split)},
                           {"a_path", e.a_path},
                           {"i_path", e.i_path},
                           {"h_path", e.h_path}});
    }
    return j;
}

inline std::string manifest_text(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

inline DatasetManifest read_manifest(const std::filesystem::path& dir_or_file) {
    const std::filesystem::path file =
        std::filesystem::is_directory(dir_or_file) ? dir_or_file / "manifest.json" : dir_or_file;
    std::ifstream in(file);
    if (!in) throw IoError("cannot open manifest: " + file.string());
    DatasetManifest m;
    m.root = file.parent_path();
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format_version").get<int>() != kManifestFormatVersion) {
            throw IoError("unsupported manifest format version: " + file.string());
        }
        const auto& c = j.at("config");
        m.config.m = c.at("m").get<std::size_t>();
        m.config.n = c.at("n").get<std::size_t>();
        m.config.n_points_min = c.at("n_points_min").get<std::size_t>();
        m.config.n_points_max = c.at("n_points_max").get<std::size_t>();
        m.config.params.wavelength = c.at("wavelength").get<double>();
        m.config.params.pixel_pitch = c.at("pixel_pitch").get<double>();
        m.config.params.z = c.at("z").get<double>();
        m.config.params.n = m.config.n;
        m.config.master_seed = c.at("master_seed").get<std::uint64_t>();
        m.config.validation_fraction = c.at("validation_fraction").get<double>();
        m.prng_name = j.at("prng_name").get<std::string>();
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.index = e.at("index").get<std::size_t>();
            entry.seed = e.at("seed").get<std::uint64_t>();
            entry.n_points = e.at("n_points").get<std::size_t>();
            const auto split = e.at("split").get<std::string>();
            if (split == "train") {
                entry.split = Split::train;
            } else if (split == "validation") {
                entry.split = Split::validation;
            } else {
                throw IoError("unknown split '" + split + "' in " + file.string());
            }
            entry.a_path = e.at("a_path").get<std::string>();
            entry.i_path = e.at("i_path").get<std::string>();
            entry.h_path = e.at("h_path").get<std::string>();
            m.entries.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw IoError("malformed manifest " + file.string() + ": " + ex.what());
    }
    if (m.entries.size() != m.config.m) throw IoError("manifest entry count != m: " + file.string());
    return m;
}

// ---- dataset build ------------------------------------------------------------

inline std::string image_relpath(char kind, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c/%06zu.pgm", kind, index);
    return buf;
}

/// Generates all triplets, writes a/, i/, h/ PGMs and manifest.json under
/// output_dir. Byte-identical output for identical configs, for any job count.
/// On failure every file written so far is removed and the error rethrown.
inline DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& output_dir,
                                     unsigned jobs = 1) {
    namespace fs = std::filesystem;
    config.validate();
    if (jobs == 0) throw ParameterError("jobs must be >= 1");

    DatasetManifest manifest;
    manifest.config = config;
    manifest.root = output_dir;
    const auto counts = point_counts(config);
    const auto splits = assign_splits(config);
    manifest.entries.resize(config.m);
    for (std::size_t j = 0; j < config.m; ++j) {
        auto& e = manifest.entries[j];
        e.index = j;
        e.seed = triplet_seed(config.master_seed, j);
        e.n_points = counts[j];
        e.split = splits[j];
        e.a_path = image_relpath('a', j);
        e.i_path = image_relpath('i', j);
        e.h_path = image_relpath('h', j);
    }

    std::vector<fs::path> created;
    auto cleanup = [&] {
        std::error_code ec;
        for (const auto& e : manifest.entries) {
            fs::remove(output_dir / e.a_path, ec);
            fs::remove(output_dir / e.i_path, ec);
            fs::remove(output_dir / e.h_path, ec);
        }
        fs::remove(output_dir / "manifest.json", ec);
        fs::remove(output_dir / "manifest.json.tmp", ec);
        for (auto it = created.rbegin(); it != created.rend(); ++it) fs::remove(*it, ec);
    };

    try {
        for (const char* sub : {"", "a", "i", "h"}) {
            const fs::path d = output_dir / sub;
            std::error_code ec;
            if (!fs::exists(d) && fs::create_directories(d, ec)) created.push_back(d);
            if (ec || !fs::is_directory(d)) throw IoError("cannot create directory: " + d.string());
        }

        std::vector<std::exception_ptr> failures(jobs);
        auto worker = [&](unsigned t) {
            try {
                for (std::size_t j = t; j < config.m; j += jobs) {
                    const auto& e = manifest.entries[j];
                    const ImageTriplet tr = synth_triplet(e.n_points, e.seed, config);
                    write_pgm16(output_dir / e.a_path, tr.a);
                    write_pgm16(output_dir / e.i_path, tr.i);
                    write_pgm16(output_dir / e.h_path, tr.h);
                }
            } catch (...) {
                failures[t] = std::current_exception();
            }
        };
        if (jobs == 1) {
            worker(0);
        } else {
            std::vector<std::jthread> pool;
            for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker, t);
        }
        for (const auto& f : failures) {
            if (f) std::rethrow_exception(f);
        }

        const fs::path tmp = output_dir / "manifest.json.tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot open for writing: " + tmp.string());
            out << manifest_text(manifest);
            if (!out) throw IoError("write failed: " + tmp.string());
        }
        std::error_code ec;
        fs::rename(tmp, output_dir / "manifest.json", ec);
        if (ec) throw IoError("cannot finalize manifest: " + (output_dir / "manifest.json").string());
    } catch (...) {
        cleanup();
        throw;
    }
    return manifest;
}

} // namespace gabornet
