#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "gabornet/synthgen.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gabornet;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config(std::size_t m, std::size_t n = 16) {
    DatasetConfig c = default_dataset_config(m, n, 7);
    c.params.z = 1e-3;
    return c;
}

std::size_t count_nonzero(const RealImage& img) {
    return static_cast<std::size_t>(std::count_if(img.values().begin(), img.values().end(), [](double v) { return v != 0.0; }));
}

} // namespace

TEST(PointCounts, ExactDecades) {
    DatasetConfig c = small_config(3);
    c.n_points_min = 1;
    c.n_points_max = 100;
    EXPECT_EQ(point_counts(c), (std::vector<std::size_t>{1, 10, 100}));
}

TEST(PointCounts, DegenerateRangeAndSingleEntry) {
    DatasetConfig c = small_config(17);
    c.n_points_min = c.n_points_max = 1;
    for (auto v : point_counts(c)) EXPECT_EQ(v, 1u);
    DatasetConfig one = small_config(1);
    one.n_points_min = 3;
    one.n_points_max = 20;
    EXPECT_EQ(point_counts(one), std::vector<std::size_t>{3});
}

TEST(PointCounts, FullScaleScheduleIsLogSpaced) {
    DatasetConfig c = default_dataset_config(50000, 512, 0);
    EXPECT_EQ(c.n_points_max, 26214u);
    const auto counts = point_counts(c);
    ASSERT_EQ(counts.size(), 50000u);
    EXPECT_EQ(counts.front(), 1u);
    EXPECT_EQ(counts.back(), 26214u);
    EXPECT_TRUE(std::is_sorted(counts.begin(), counts.end()));
    const double log_max = std::log(26214.0);
    for (std::size_t j = 0; j < counts.size(); ++j) {
        const double ideal = std::exp(static_cast<double>(j) / 49999.0 * log_max);
        ASSERT_LE(std::abs(static_cast<double>(counts[j]) - ideal), 0.5 + 1e-9) << j;
    }
}

TEST(GenerateSourceImage, SinglePointAndDeterminism) {
    const auto img = generate_source_image(32, 1, 99);
    EXPECT_EQ(count_nonzero(img), 1u);
    EXPECT_EQ(generate_source_image(32, 40, 5), generate_source_image(32, 40, 5));
    EXPECT_NE(generate_source_image(32, 40, 5), generate_source_image(32, 40, 6));
}

TEST(GenerateSourceImage, FiftyEightPointsOnFullSizeGrid) {
    const auto img = generate_source_image(512, 58, triplet_seed(7, 0));
    const std::size_t nz = count_nonzero(img);
    EXPECT_GE(nz, 1u);
    EXPECT_LE(nz, 58u);
    EXPECT_EQ(nz, 58u);  // regression: no collisions for this seed
    for (double v : img.values()) {
        EXPECT_LE(v, 1.0);
        EXPECT_GE(v, 0.0);
    }
}

TEST(GenerateSourceImage, RejectsOutOfRangeCounts) {
    EXPECT_THROW(generate_source_image(4, 0, 1), ParameterError);
    EXPECT_THROW(generate_source_image(4, 17, 1), ParameterError);
    EXPECT_NO_THROW(generate_source_image(4, 16, 1));
}

TEST(LowpassCircular, ApertureBoundaryIncluded) {
    // n = 16: R^2 = 32, so (4, 4) lies exactly on the rim.
    EXPECT_TRUE(inside_aperture(4, 4, 16));
    EXPECT_TRUE(inside_aperture(12, 12, 16));
    EXPECT_FALSE(inside_aperture(4, 5, 16));
    EXPECT_FALSE(inside_aperture(8, 0, 16));
}

TEST(LowpassCircular, ConstantUnchanged) {
    const RealImage flat(16, std::vector<double>(256, 0.3));
    const auto out = lowpass_circular(flat);
    for (double v : out.values()) EXPECT_NEAR(v, 0.3, 1e-14);
}

TEST(LowpassCircular, NyquistCheckerboardRemoved) {
    std::vector<double> v(64);
    for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t c = 0; c < 8; ++c) v[r * 8 + c] = (r + c) % 2 == 0 ? 1.0 : 0.0;
    }
    // mean 0.5 survives, the (4,4) Nyquist mode does not
    const auto out = lowpass_circular(RealImage(8, v));
    for (double x : out.values()) EXPECT_NEAR(x, 0.5, 1e-14);
    const auto spectrum = dft2(lift(out), Direction::forward);
    EXPECT_NEAR(std::abs(spectrum.at(4, 4)), 0.0, 1e-12);
}

TEST(LowpassCircular, PointSourceMatchesDirectSumFilter) {
    const std::size_t n = 16;
    std::vector<double> v(n * n, 0.0);
    v[5 * n + 9] = 0.8;
    const auto out = lowpass_circular(RealImage(n, v));

    std::vector<oracle::cd> f(v.begin(), v.end());
    auto spectrum = oracle::dft2(f, n, -1);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            const double fr = oracle::signed_frequency(r, n), fc = oracle::signed_frequency(c, n);
            if (fr * fr + fc * fc > static_cast<double>(n * n) / 8.0) spectrum[r * n + c] = 0.0;
        }
    }
    auto back = oracle::dft2(spectrum, n, +1);
    for (std::size_t i = 0; i < n * n; ++i) {
        const double expected = std::max(0.0, back[i].real() / static_cast<double>(n * n));
        ASSERT_NEAR(out.values()[i], expected, 1e-10) << i;
    }
    EXPECT_EQ(out.argmax(), 5 * n + 9);
}

TEST(SynthInterferogram, TrivialInputs) {
    const auto c = small_config(1, 16);
    EXPECT_EQ(synth_interferogram(RealImage(16), c.params), RealImage(16));
    const auto flat = synth_interferogram(RealImage(16, std::vector<double>(256, 0.7)), c.params);
    for (double v : flat.values()) EXPECT_NEAR(v, 0.7, 1e-12);
}

TEST(SynthInterferogram, CenteredPointMatchesDirectSum) {
    DatasetConfig c = small_config(1, 64);
    std::vector<double> v(64 * 64, 0.0);
    v[32 * 64 + 32] = 1.0;
    const auto got = synth_interferogram(RealImage(64, v), c.params);
    const std::vector<oracle::cd> f(v.begin(), v.end());
    const auto field = oracle::propagate(f, 64, c.params.wavelength, c.params.pixel_pitch, -c.params.z);
    double worst = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) worst = std::max(worst, std::abs(got.values()[i] - std::abs(field[i])));
    EXPECT_LT(worst, 1e-8);
    // concentric: the pattern is symmetric under reflection through the source
    for (std::size_t d = 1; d < 20; ++d) {
        EXPECT_NEAR(got.at(32, 32 + d), got.at(32, 32 - d), 1e-12);
        EXPECT_NEAR(got.at(32 + d, 32), got.at(32, 32 + d), 1e-12);
    }
}

TEST(SynthInterferogram, RejectsBadDistance) {
    auto c = small_config(1, 16);
    c.params.z = -1e-3;
    EXPECT_THROW(synth_interferogram(RealImage(16), c.params), ParameterError);
}

TEST(SynthTriplet, SinglePointRefocusesNearSource) {
    const auto c = small_config(1, 64);
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const auto t = synth_triplet(1, seed, c);
        EXPECT_LE(test_util::torus_distance(t.a.argmax(), t.h.argmax(), 64), 1.0) << seed;
        EXPECT_EQ(t.a.max(), 1.0);
        EXPECT_EQ(t.i.max(), 1.0);
        EXPECT_EQ(t.h.max(), 1.0);
        EXPECT_EQ(t.n_points, 1u);
        EXPECT_EQ(t.seed, seed);
    }
}

TEST(SynthTriplet, DenseTripletKeepsInvariants) {
    const auto c = small_config(1, 64);
    const auto t = synth_triplet(64 * 64 / 10, 77, c);
    for (const RealImage* img : {&t.a, &t.i, &t.h}) {
        EXPECT_EQ(img->max(), 1.0);
        EXPECT_EQ(img->n(), 64u);
    }
}

TEST(DatasetConfig, Validation) {
    auto c = small_config(10);
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.n_points_min = 0;
    EXPECT_THROW(bad.validate(), ParameterError);
    bad = c;
    bad.n_points_max = 16 * 16 + 1;
    EXPECT_THROW(bad.validate(), ParameterError);
    bad = c;
    bad.validation_fraction = 1.0;
    EXPECT_THROW(bad.validate(), ParameterError);
    bad = c;
    bad.m = 1;
    bad.validation_fraction = 0.6;  // rounds to 1 == m
    EXPECT_THROW(bad.validate(), ParameterError);
    bad = c;
    bad.n = 12;
    bad.params.n = 12;
    EXPECT_THROW(bad.validate(), DimensionError);
}

TEST(Splits, RoundingRule) {
    auto c = small_config(10);
    c.validation_fraction = 0.15;
    EXPECT_EQ(c.validation_count(), 2u);
    const auto s = assign_splits(c);
    EXPECT_EQ(std::count(s.begin(), s.end(), Split::validation), 2);

    auto big = default_dataset_config(50000, 512, 3);
    EXPECT_EQ(big.validation_count(), 7500u);
    const auto sb = assign_splits(big);
    EXPECT_EQ(std::count(sb.begin(), sb.end(), Split::validation), 7500);
    EXPECT_EQ(std::count(sb.begin(), sb.end(), Split::train), 42500);
}

TEST(BuildDataset, WritesLayoutAndManifest) {
    test_util::TempDir dir("synth_layout");
    auto c = small_config(10);
    const auto m = build_dataset(c, dir.path());
    ASSERT_EQ(m.entries.size(), 10u);
    std::set<std::uint64_t> seeds;
    for (const auto& e : m.entries) {
        EXPECT_EQ(e.seed, triplet_seed(c.master_seed, e.index));
        seeds.insert(e.seed);
        for (const auto& p : {e.a_path, e.i_path, e.h_path}) EXPECT_TRUE(fs::exists(dir.path() / p)) << p;
    }
    EXPECT_EQ(seeds.size(), 10u);
    EXPECT_EQ(m.entries[3].a_path, "a/000003.pgm");
    EXPECT_EQ(m.split(Split::validation).size(), 2u);

    const auto loaded = read_manifest(dir.path());
    EXPECT_EQ(manifest_text(loaded), manifest_text(m));
    EXPECT_EQ(loaded.prng_name, kPrngName);
}

TEST(BuildDataset, ByteIdenticalAcrossRunsAndJobCounts) {
    test_util::TempDir d1("synth_det1"), d2("synth_det2"), d3("synth_det3");
    auto c = small_config(12);
    build_dataset(c, d1.path(), 1);
    build_dataset(c, d2.path(), 1);
    build_dataset(c, d3.path(), 3);
    EXPECT_TRUE(test_util::trees_identical(d1.path(), d2.path()));
    EXPECT_TRUE(test_util::trees_identical(d1.path(), d3.path()));
}

TEST(BuildDataset, StoredTripletsAreSelfConsistent) {
    test_util::TempDir dir("synth_consistency");
    auto c = small_config(8, 32);
    const auto m = build_dataset(c, dir.path());
    for (const auto& e : m.entries) {
        const auto a = read_pgm(dir.path() / e.a_path);
        const auto i = read_pgm(dir.path() / e.i_path);
        const auto h = read_pgm(dir.path() / e.h_path);
        EXPECT_EQ(a.max(), 1.0);
        EXPECT_EQ(i.max(), 1.0);
        EXPECT_EQ(h.max(), 1.0);
        const auto again = max_normalized(reconstruct_hologram(i, c.params));
        double worst = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) worst = std::max(worst, std::abs(again.values()[k] - h.values()[k]));
        EXPECT_LE(worst, 1e-4) << e.index;

        // unquantized pipeline reproduces itself exactly up to rounding
        const auto t = synth_triplet(e.n_points, e.seed, c);
        const auto h2 = max_normalized(reconstruct_hologram(t.i, c.params));
        for (std::size_t k = 0; k < h2.size(); ++k) ASSERT_NEAR(h2.values()[k], t.h.values()[k], 1e-12);
        EXPECT_EQ(quantized16(t.h), h);
    }
}

TEST(BuildDataset, FailureLeavesNoPartialOutput) {
    test_util::TempDir dir("synth_fail");
    const fs::path blocker = dir.path() / "not_a_dir";
    { std::ofstream(blocker) << "x"; }
    EXPECT_THROW(build_dataset(small_config(4), blocker), IoError);

    // an unwritable image slot aborts the build and removes what was written
    const fs::path out = dir.path() / "ds";
    fs::create_directories(out / "h" / "000002.pgm");
    EXPECT_THROW(build_dataset(small_config(4), out), IoError);
    EXPECT_FALSE(fs::exists(out / "manifest.json"));
    EXPECT_FALSE(fs::exists(out / "a" / "000000.pgm"));
}
