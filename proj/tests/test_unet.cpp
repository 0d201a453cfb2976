#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "gabornet/unet.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gabornet;
using T4 = Tensor4<double>;

namespace {

T4 random_batch(std::size_t b, std::size_t s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    T4 t(b, 1, s, s);
    for (double& v : t.values()) v = u(rng);
    return t;
}

std::vector<double> flat_grads(const Parameters<double>& p) {
    std::vector<double> out;
    for (const auto& a : p.arrays()) out.insert(out.end(), a.grad.values().begin(), a.grad.values().end());
    return out;
}

} // namespace

TEST(UNet, ChannelScheduleDoublesPerLevel) {
    const UNetConfig c{512, 7, 16, 3, 0};
    EXPECT_NO_THROW(c.validate());
    for (std::size_t l = 0; l <= 7; ++l) EXPECT_EQ(c.channels(l), 16u << l);
    EXPECT_EQ(c.channels(7), 2048u);
    EXPECT_EQ(c.input_size >> c.depth, 4u);
}

TEST(UNet, ConfigValidation) {
    EXPECT_THROW((UNetConfig{48, 2, 4, 3, 0}.validate()), ParameterError);
    EXPECT_THROW((UNetConfig{16, 5, 4, 3, 0}.validate()), ParameterError);
    EXPECT_THROW((UNetConfig{16, 2, 0, 3, 0}.validate()), ParameterError);
    EXPECT_THROW((UNetConfig{16, 2, 4, 5, 0}.validate()), ParameterError);
    EXPECT_NO_THROW((UNetConfig{16, 4, 4, 3, 0}.validate()));
}

TEST(UNet, ParameterCountClosedForm) {
    EXPECT_EQ(parameter_count({512, 7, 16, 3, 0}), 124440145u);
    EXPECT_EQ(parameter_count({64, 3, 8, 3, 0}), 120681u);
    EXPECT_EQ(parameter_count({16, 2, 4, 3, 0}), 7397u);
    for (std::size_t depth = 1; depth <= 4; ++depth) {
        for (std::size_t base : {1u, 2u, 5u, 8u}) {
            const UNetConfig c{32, depth, base, 3, 0};
            EXPECT_EQ(zero_parameters(c).scalar_count(), parameter_count(c)) << depth << " " << base;
        }
    }
}

TEST(UNet, ParameterNamesAndShapes) {
    const auto p = zero_parameters(UNetConfig{16, 2, 4, 3, 0});
    EXPECT_EQ(p.at("stem.conv1.weight").value.shape(), (T4::Shape{4, 1, 3, 3}));
    EXPECT_EQ(p.at("down2.conv1.weight").value.shape(), (T4::Shape{16, 8, 3, 3}));
    EXPECT_EQ(p.at("up2.upconv.weight").value.shape(), (T4::Shape{16, 8, 2, 2}));
    EXPECT_EQ(p.at("up1.conv1.weight").value.shape(), (T4::Shape{4, 8, 3, 3}));
    EXPECT_EQ(p.at("head.weight").value.shape(), (T4::Shape{1, 4, 1, 1}));
    EXPECT_EQ(p.at("head.bias").extents(), std::vector<std::size_t>{1});
    EXPECT_FALSE(p.contains("down3.conv1.weight"));
    EXPECT_THROW(p.at("nope"), ParameterError);
}

TEST(UNet, ZeroWeightsGiveZeroOutput) {
    const UNetConfig c{8, 1, 2, 3, 0};
    const auto p = zero_parameters(c);
    std::mt19937_64 rng(31);
    const auto x = random_batch(3, 8, rng);
    EXPECT_EQ(unet_forward(c, p, x).output, T4(3, 1, 8, 8));
}

TEST(UNet, OutputShapeAndNonNegativity) {
    const UNetConfig c{32, 3, 4, 3, 5};
    const auto p = init_parameters(c);
    std::mt19937_64 rng(32);
    const auto y = unet_forward(c, p, random_batch(2, 32, rng)).output;
    EXPECT_EQ(y.shape(), (T4::Shape{2, 1, 32, 32}));
    for (double v : y.values()) EXPECT_GE(v, 0.0);
}

TEST(UNet, InputShapeErrorsNameTheStage) {
    const UNetConfig c{16, 2, 4, 3, 0};
    const auto p = zero_parameters(c);
    try {
        unet_forward(c, p, T4(1, 1, 8, 8));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("stage"), std::string::npos);
    }
    EXPECT_THROW(unet_forward(c, p, T4(1, 2, 16, 16)), DimensionError);
}

TEST(UNet, BatchEntriesAreIndependent) {
    const UNetConfig c{16, 2, 4, 3, 9};
    const auto p = init_parameters(c);
    std::mt19937_64 rng(33);
    const auto x = random_batch(3, 16, rng);
    const auto y = unet_forward(c, p, x).output;
    for (std::size_t b = 0; b < 3; ++b) {
        const T4 xb({1, 1, 16, 16}, std::vector<double>(x.sample(b), x.sample(b) + 256));
        const auto yb = unet_forward(c, p, xb).output;
        for (std::size_t i = 0; i < 256; ++i) EXPECT_NEAR(y.values()[b * 256 + i], yb.values()[i], 1e-14);
    }
}

TEST(UNet, EndToEndGradientsMatchFiniteDifferences) {
    const auto r = gradcheck::end_to_end();
    EXPECT_EQ(r.scalars, 7397u);
    EXPECT_LT(r.parameter_error, 1e-5);
    EXPECT_LT(r.input_error, 1e-5);
}

TEST(Layers, GradientSuiteWithinTolerance) {
    for (const auto& r : gradcheck::layer_suite(41)) EXPECT_LT(r.error, 1e-6) << r.layer;
}

TEST(UNet, ZeroUpstreamGradientGivesZeroParameterGradients) {
    const UNetConfig c{16, 2, 4, 3, 3};
    auto p = init_parameters(c);
    std::mt19937_64 rng(35);
    const auto fwd = unet_forward(c, p, random_batch(2, 16, rng));
    unet_backward(c, p, fwd.cache, T4(2, 1, 16, 16));
    for (double g : flat_grads(p)) EXPECT_EQ(g, 0.0);
}

TEST(UNet, DuplicatedSampleDoublesGradient) {
    const UNetConfig c{16, 2, 4, 3, 4};
    auto p = init_parameters(c);
    std::mt19937_64 rng(36);
    const auto one = random_batch(1, 16, rng);
    T4 two(2, 1, 16, 16);
    std::copy(one.values().begin(), one.values().end(), two.data());
    std::copy(one.values().begin(), one.values().end(), two.data() + 256);

    auto f1 = unet_forward(c, p, one);
    unet_backward(c, p, f1.cache, T4(one.shape(), 1.0));
    const auto g1 = flat_grads(p);
    p.zero_grad();
    auto f2 = unet_forward(c, p, two);
    unet_backward(c, p, f2.cache, T4(two.shape(), 1.0));
    const auto g2 = flat_grads(p);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-12 * (1.0 + std::abs(g1[i])));
}

TEST(UNet, BackwardAccumulatesAcrossCalls) {
    const UNetConfig c{8, 1, 2, 3, 4};
    auto p = init_parameters(c);
    std::mt19937_64 rng(37);
    const auto x = random_batch(1, 8, rng);
    auto f = unet_forward(c, p, x);
    unet_backward(c, p, f.cache, T4(x.shape(), 1.0));
    const auto once = flat_grads(p);
    unet_backward(c, p, f.cache, T4(x.shape(), 1.0));
    const auto twice = flat_grads(p);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(twice[i], 2.0 * once[i]);
}

TEST(UNet, StaleOrForeignCacheIsRejected) {
    const UNetConfig c{8, 1, 2, 3, 1};
    auto p = init_parameters(c);
    auto q = init_parameters(c);
    std::mt19937_64 rng(38);
    const auto x = random_batch(1, 8, rng);
    const auto f = unet_forward(c, p, x);
    EXPECT_THROW(unet_backward(c, q, f.cache, T4(x.shape())), StateError);
    EXPECT_THROW(unet_backward(UNetConfig{8, 1, 4, 3, 1}, p, f.cache, T4(x.shape())), StateError);
    sgd_step(p, 0.1);
    EXPECT_THROW(unet_backward(c, p, f.cache, T4(x.shape())), StateError);
    EXPECT_THROW(unet_backward(c, p, UNetCache<double>{}, T4(x.shape())), StateError);
}

TEST(UNetInit, DeterministicPerSeed) {
    const UNetConfig c{16, 2, 4, 3, 0};
    EXPECT_TRUE(init_parameters(c, 5).same_values(init_parameters(c, 5)));
    EXPECT_FALSE(init_parameters(c, 5).same_values(init_parameters(c, 6)));
    EXPECT_EQ(init_parameters(c, 5).checksum(), init_parameters(c, 5).checksum());
}

TEST(UNetInit, BiasesZeroKernelsBoundedWithUniformVariance) {
    const UNetConfig c{64, 3, 8, 3, 0};
    const auto p = init_parameters(c, 99);
    for (const auto& a : p.arrays()) {
        if (a.rank == 1) {
            for (double v : a.value.values()) EXPECT_EQ(v, 0.0) << a.name;
            continue;
        }
        const auto& s = a.value.shape();
        const double bound = std::sqrt(6.0 / static_cast<double>((s[0] + s[1]) * s[2] * s[3]));
        double sq = 0.0;
        for (double v : a.value.values()) {
            EXPECT_LT(std::abs(v), bound);
            sq += v * v;
        }
        if (a.value.size() >= 10000) {
            const double var = sq / static_cast<double>(a.value.size());
            EXPECT_NEAR(var / (bound * bound / 3.0), 1.0, 0.2) << a.name;
        }
    }
}

TEST(Sgd, StepArithmetic) {
    Parameters<double> p;
    p.add("w", {1});
    p.at("w").value.fill(1.0);
    p.at("w").grad.fill(2.0);
    const auto gen = p.generation();
    sgd_step(p, 0.1);
    EXPECT_DOUBLE_EQ(p.at("w").value.values()[0], 0.8);
    EXPECT_EQ(p.at("w").grad.values()[0], 0.0);
    EXPECT_GT(p.generation(), gen);
}

TEST(Sgd, ZeroLearningRateLeavesValues) {
    const UNetConfig c{8, 1, 2, 3, 0};
    auto p = init_parameters(c, 1);
    const auto before = p.checksum();
    for (auto& a : p.arrays()) a.grad.fill(3.0);
    sgd_step(p, 0.0);
    EXPECT_EQ(p.checksum(), before);
}

TEST(Sgd, ConvergesOnQuadratic) {
    Parameters<double> p;
    p.add("w", {1});
    for (int i = 0; i < 200; ++i) {
        const double w = p.at("w").value.values()[0];
        p.at("w").grad.fill(2.0 * (w - 3.0));
        sgd_step(p, 0.1);
    }
    EXPECT_NEAR(p.at("w").value.values()[0], 3.0, 1e-9);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const UNetConfig c{16, 2, 4, 3, 12345};
    const auto p = init_parameters(c);
    const test_util::TempDir dir("ckpt");
    save_checkpoint(dir.path() / "a.gfnc", c, p);
    const auto ck = load_checkpoint(dir.path() / "a.gfnc");
    EXPECT_EQ(ck.config, c);
    EXPECT_TRUE(ck.params.same_values(p));
    EXPECT_EQ(ck.params.checksum(), p.checksum());
    EXPECT_EQ(encode_checkpoint(ck.config, ck.params), encode_checkpoint(c, p));
}

TEST(Checkpoint, PreservesNamesAndShapesAcrossConfigs) {
    for (std::size_t depth = 1; depth <= 3; ++depth) {
        const UNetConfig c{16, depth, 3, 3, depth};
        const auto p = init_parameters(c);
        const auto ck = decode_checkpoint(encode_checkpoint(c, p));
        ASSERT_EQ(ck.params.arrays().size(), p.arrays().size());
        for (std::size_t i = 0; i < p.arrays().size(); ++i) {
            EXPECT_EQ(ck.params.arrays()[i].name, p.arrays()[i].name);
            EXPECT_EQ(ck.params.arrays()[i].value.shape(), p.arrays()[i].value.shape());
        }
    }
}

TEST(Checkpoint, FloatParametersWidenLosslessly) {
    const UNetConfig c{8, 1, 2, 3, 7};
    const auto pf = init_parameters<float>(c);
    const auto back = decode_checkpoint<float>(encode_checkpoint(c, pf));
    EXPECT_TRUE(back.params.same_values(pf));
}

TEST(Checkpoint, CorruptionIsIoError) {
    const UNetConfig c{8, 1, 2, 3, 7};
    const std::string good = encode_checkpoint(c, init_parameters(c));
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), IoError);
    EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 3)), IoError);
    EXPECT_THROW(decode_checkpoint(good + "x"), IoError);
    std::string bad_version = good;
    bad_version[4] = 9;
    EXPECT_THROW(decode_checkpoint(bad_version), IoError);
    std::string bad_name = good;
    const auto at = bad_name.find("stem");
    bad_name[at] = 'S';
    EXPECT_THROW(decode_checkpoint(bad_name), IoError);
    std::string bad_config = good;
    bad_config[8] = 7;  // input size 7
    EXPECT_THROW(decode_checkpoint(bad_config), IoError);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.gfnc"), IoError);
}
