#pragma once

// UNet auto-encoder with manual reverse-mode differentiation.
//
// Topology for (input_size S, depth D, base channels C):
//   stem        conv3x3(1 -> C) + ReLU, conv3x3(C -> C) + ReLU          S x S
//   down l      maxpool2, conv3x3(C_{l-1} -> C_l) + ReLU, conv3x3 + ReLU  S / 2^l
//   up l        convtranspose2(C_l -> C_{l-1}), concat(up, skip_{l-1}),
//               conv3x3(2 C_{l-1} -> C_{l-1}) + ReLU, conv3x3 + ReLU     for l = D..1
//   head        conv1x1(C -> 1) + ReLU
// with C_l = C * 2^l. Trainable arrays are named "<block>.<layer>.weight|bias".

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unordered_map>
#include <vector>

#include "gabornet/errors.hpp"
#include "gabornet/layers.hpp"
#include "gabornet/random.hpp"
#include "gabornet/tensor.hpp"

namespace gabornet {

struct UNetConfig {
    std::size_t input_size = 64;
    std::size_t depth = 3;
    std::size_t base_channels = 16;
    std::size_t kernel_size = 3;
    std::uint64_t seed = 0;

    /// Channel count of the encoder feature map at `level` (0 = stem).
    std::size_t channels(std::size_t level) const { return base_channels << level; }

    void validate() const {
        if (input_size == 0 || (input_size & (input_size - 1)) != 0) {
            throw ParameterError("input size must be a power of two");
        }
        if ((input_size >> depth) < 1 || depth >= 63) throw ParameterError("depth leaves an empty bottleneck");
        if (base_channels < 1) throw ParameterError("base channels must be >= 1");
        if (kernel_size != 3) throw ParameterError("kernel size is fixed at 3");
    }

    bool operator==(const UNetConfig&) const = default;
};

/// Closed-form trainable-scalar count:
///   stem   9C + C + 9C^2 + C
///   down   9 C_{l-1} C_l + C_l + 9 C_l^2 + C_l
///   up     4 C_l C_{l-1} + C_{l-1} + 18 C_{l-1}^2 + C_{l-1} + 9 C_{l-1}^2 + C_{l-1}
///   head   C + 1
inline std::uint64_t parameter_count(const UNetConfig& config) {
    config.validate();
    const std::uint64_t c0 = config.base_channels;
    std::uint64_t total = 9 * c0 + c0 + 9 * c0 * c0 + c0;
    for (std::size_t l = 1; l <= config.depth; ++l) {
        const std::uint64_t lo = config.channels(l - 1), hi = config.channels(l);
        total += 9 * lo * hi + hi + 9 * hi * hi + hi;
        total += 4 * hi * lo + lo + 18 * lo * lo + lo + 9 * lo * lo + lo;
    }
    return total + c0 + 1;
}

template <typename T>
struct ParamArray {
    std::string name;
    std::size_t rank = 4;  // 4 for kernels, 1 for biases (stored as (n,1,1,1))
    Tensor4<T> value;
    Tensor4<T> grad;

    std::vector<std::size_t> extents() const {
        if (rank == 1) return {value.batch()};
        return {value.shape().begin(), value.shape().end()};
    }
};

/// Ordered named arrays with matching gradients. Every mutation through
/// sgd_step or touch() advances the generation, invalidating forward caches.
template <typename T>
class Parameters {
public:
    Parameters() = default;

    void add(std::string name, std::vector<std::size_t> extents) {
        if (index_.contains(name)) throw ParameterError("duplicate parameter name " + name);
        typename Tensor4<T>::Shape shape{1, 1, 1, 1};
        if (extents.size() == 1) {
            shape[0] = extents[0];
        } else if (extents.size() == 4) {
            std::copy(extents.begin(), extents.end(), shape.begin());
        } else {
            throw DimensionError("parameter " + name + " must have rank 1 or 4");
        }
        index_.emplace(name, arrays_.size());
        arrays_.push_back(ParamArray<T>{std::move(name), extents.size(), Tensor4<T>(shape), Tensor4<T>(shape)});
    }

    std::vector<ParamArray<T>>& arrays() noexcept { return arrays_; }
    const std::vector<ParamArray<T>>& arrays() const noexcept { return arrays_; }

    ParamArray<T>& at(const std::string& name) { return arrays_[lookup(name)]; }
    const ParamArray<T>& at(const std::string& name) const { return arrays_[lookup(name)]; }
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& a : arrays_) n += a.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& a : arrays_) a.grad.fill(T{0});
    }

    std::uint64_t generation() const noexcept { return generation_; }
    void touch() noexcept { ++generation_; }

    /// Values only; gradients and generation are ignored.
    bool same_values(const Parameters& other) const {
        if (arrays_.size() != other.arrays_.size()) return false;
        for (std::size_t i = 0; i < arrays_.size(); ++i) {
            if (arrays_[i].name != other.arrays_[i].name || arrays_[i].value != other.arrays_[i].value) return false;
        }
        return true;
    }

    /// FNV-1a over names and value bit patterns.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
        };
        for (const auto& a : arrays_) {
            mix(a.name.data(), a.name.size());
            mix(a.value.data(), a.value.size() * sizeof(T));
        }
        return h;
    }

private:
    std::size_t lookup(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw ParameterError("no parameter named " + name);
        return it->second;
    }

    std::vector<ParamArray<T>> arrays_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t generation_ = 0;
};

/// Zero-valued parameters with the topology's names and shapes.
template <typename T = double>
Parameters<T> zero_parameters(const UNetConfig& config) {
    config.validate();
    Parameters<T> p;
    const std::size_t k = config.kernel_size;
    auto conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t ks) {
        p.add(name + ".weight", {out, in, ks, ks});
        p.add(name + ".bias", {out});
    };
    conv("stem.conv1", 1, config.channels(0), k);
    conv("stem.conv2", config.channels(0), config.channels(0), k);
    for (std::size_t l = 1; l <= config.depth; ++l) {
        const std::string block = "down" + std::to_string(l);
        conv(block + ".conv1", config.channels(l - 1), config.channels(l), k);
        conv(block + ".conv2", config.channels(l), config.channels(l), k);
    }
    for (std::size_t l = config.depth; l >= 1; --l) {
        const std::string block = "up" + std::to_string(l);
        const std::size_t lo = config.channels(l - 1), hi = config.channels(l);
        p.add(block + ".upconv.weight", {hi, lo, 2, 2});
        p.add(block + ".upconv.bias", {lo});
        conv(block + ".conv1", 2 * lo, lo, k);
        conv(block + ".conv2", lo, lo, k);
    }
    conv("head", config.channels(0), 1, 1);
    return p;
}

/// Kernels uniform on (-b, b), b = sqrt(6 / (fan_in + fan_out)); biases zero.
/// Array i draws from its own stream seeded with derive_seed(seed, i).
template <typename T = double>
Parameters<T> init_parameters(const UNetConfig& config, std::uint64_t seed) {
    Parameters<T> p = zero_parameters<T>(config);
    auto& arrays = p.arrays();
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        auto& a = arrays[i];
        if (a.rank == 1) continue;
        const auto& s = a.value.shape();
        const double receptive = static_cast<double>(s[2] * s[3]);
        const double fan_sum = (static_cast<double>(s[0]) + static_cast<double>(s[1])) * receptive;
        const double bound = std::sqrt(6.0 / fan_sum);
        Random rng(derive_seed(seed, i));
        for (T& v : a.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    return p;
}

template <typename T = double>
Parameters<T> init_parameters(const UNetConfig& config) {
    return init_parameters<T>(config, config.seed);
}

/// w <- w - lr * grad for every array, then gradients are zeroed.
template <typename T>
void sgd_step(Parameters<T>& params, T learning_rate) {
    for (auto& a : params.arrays()) {
        auto v = a.value.values();
        auto g = a.grad.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
        a.grad.fill(T{0});
    }
    params.touch();
}

// ---- forward / backward -----------------------------------------------------

template <typename T>
struct ConvTrace {
    std::string layer;
    Tensor4<T> input;
    Tensor4<T> preact;
};

template <typename T>
struct PoolTrace {
    typename Tensor4<T>::Shape input_shape;
    std::vector<std::size_t> argmax;
};

/// Everything unet_backward needs from the matching unet_forward call.
template <typename T>
struct UNetCache {
    UNetConfig config;
    const Parameters<T>* owner = nullptr;
    std::uint64_t generation = 0;
    typename Tensor4<T>::Shape input_shape{};
    std::vector<ConvTrace<T>> convs;        // execution order
    std::vector<PoolTrace<T>> pools;        // levels 1..D
    std::vector<Tensor4<T>> upconv_inputs;  // levels D..1
};

namespace detail {

template <typename T>
Tensor4<T> conv_stage(const Parameters<T>& params, const std::string& layer, const Tensor4<T>& x,
                      UNetCache<T>& cache) {
    const auto& w = params.at(layer + ".weight");
    const auto& b = params.at(layer + ".bias");
    Tensor4<T> pre;
    try {
        pre = conv2d(x, w.value, b.value.values());
    } catch (const DimensionError& e) {
        throw DimensionError("stage " + layer + ": " + e.what());
    }
    Tensor4<T> out = relu(pre);
    cache.convs.push_back(ConvTrace<T>{layer, x, std::move(pre)});
    return out;
}

// Backward through relu(conv(x)); accumulates parameter gradients.
template <typename T>
Tensor4<T> conv_stage_backward(Parameters<T>& params, const ConvTrace<T>& trace, const Tensor4<T>& grad) {
    auto& w = params.at(trace.layer + ".weight");
    auto& b = params.at(trace.layer + ".bias");
    const Tensor4<T> g_pre = relu_backward(trace.preact, grad);
    auto g = conv2d_backward(trace.input, w.value, g_pre);
    auto wv = w.grad.values();
    auto gw = g.weight.values();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] += gw[i];
    auto bv = b.grad.values();
    for (std::size_t i = 0; i < bv.size(); ++i) bv[i] += g.bias[i];
    return std::move(g.input);
}

inline std::string level_name(const char* block, std::size_t level) { return block + std::to_string(level); }

} // namespace detail

template <typename T>
struct ForwardResult {
    Tensor4<T> output;
    UNetCache<T> cache;
};

/// Runs the network on a (B, 1, S, S) batch. Output has the input's shape.
template <typename T>
ForwardResult<T> unet_forward(const UNetConfig& config, const Parameters<T>& params, const Tensor4<T>& input) {
    config.validate();
    const std::size_t s = config.input_size;
    if (input.channels() != 1 || input.height() != s || input.width() != s) {
        throw DimensionError("stage input: expected (B,1," + std::to_string(s) + "," + std::to_string(s) +
                             "), got " + shape_string(input));
    }
    ForwardResult<T> r;
    auto& cache = r.cache;
    cache.config = config;
    cache.owner = &params;
    cache.generation = params.generation();
    cache.input_shape = input.shape();

    std::vector<Tensor4<T>> skips;
    Tensor4<T> x = detail::conv_stage(params, "stem.conv1", input, cache);
    x = detail::conv_stage(params, "stem.conv2", x, cache);
    for (std::size_t l = 1; l <= config.depth; ++l) {
        skips.push_back(x);
        auto pooled = maxpool2(x);
        cache.pools.push_back(PoolTrace<T>{x.shape(), std::move(pooled.argmax)});
        const std::string block = detail::level_name("down", l);
        x = detail::conv_stage(params, block + ".conv1", pooled.output, cache);
        x = detail::conv_stage(params, block + ".conv2", x, cache);
    }
    for (std::size_t l = config.depth; l >= 1; --l) {
        const std::string block = detail::level_name("up", l);
        const auto& w = params.at(block + ".upconv.weight");
        const auto& b = params.at(block + ".upconv.bias");
        Tensor4<T> up;
        try {
            up = convtranspose2(x, w.value, b.value.values());
        } catch (const DimensionError& e) {
            throw DimensionError("stage " + block + ".upconv: " + e.what());
        }
        cache.upconv_inputs.push_back(std::move(x));
        Tensor4<T> merged;
        try {
            merged = concat_channels(up, skips[l - 1]);
        } catch (const DimensionError& e) {
            throw DimensionError("stage " + block + ".concat: " + e.what());
        }
        x = detail::conv_stage(params, block + ".conv1", merged, cache);
        x = detail::conv_stage(params, block + ".conv2", x, cache);
    }
    r.output = detail::conv_stage(params, "head", x, cache);
    return r;
}

/// Accumulates parameter gradients for d(loss)/d(output) = grad_output and
/// returns d(loss)/d(input).
template <typename T>
Tensor4<T> unet_backward(const UNetConfig& config, Parameters<T>& params, const UNetCache<T>& cache,
                         const Tensor4<T>& grad_output) {
    if (cache.owner != &params || cache.generation != params.generation() || !(cache.config == config)) {
        throw StateError("forward cache does not belong to these parameters (stale or foreign cache)");
    }
    const std::size_t expected_convs = 2 + 4 * config.depth + 1;
    if (cache.convs.size() != expected_convs) throw StateError("forward cache is incomplete");
    if (grad_output.shape() != cache.input_shape) {
        throw DimensionError("output gradient has shape " + shape_string(grad_output));
    }

    std::size_t conv_at = cache.convs.size();
    auto next_conv = [&]() -> const ConvTrace<T>& { return cache.convs[--conv_at]; };

    Tensor4<T> g = detail::conv_stage_backward(params, next_conv(), grad_output);  // head
    std::vector<Tensor4<T>> skip_grads(config.depth);
    for (std::size_t k = 0; k < config.depth; ++k) {
        const std::size_t l = k + 1;  // decoder levels were run D..1; unwind 1..D
        const std::string block = detail::level_name("up", l);
        g = detail::conv_stage_backward(params, next_conv(), g);
        g = detail::conv_stage_backward(params, next_conv(), g);
        const std::size_t up_channels = config.channels(l - 1);
        auto [g_up, g_skip] = split_channels(g, up_channels);
        skip_grads[l - 1] = std::move(g_skip);
        auto& w = params.at(block + ".upconv.weight");
        auto& b = params.at(block + ".upconv.bias");
        const Tensor4<T>& up_input = cache.upconv_inputs[config.depth - l];
        auto gt = convtranspose2_backward(up_input, w.value, g_up);
        auto wv = w.grad.values();
        for (std::size_t i = 0; i < wv.size(); ++i) wv[i] += gt.weight.values()[i];
        auto bv = b.grad.values();
        for (std::size_t i = 0; i < bv.size(); ++i) bv[i] += gt.bias[i];
        g = std::move(gt.input);
    }
    for (std::size_t l = config.depth; l >= 1; --l) {
        g = detail::conv_stage_backward(params, next_conv(), g);
        g = detail::conv_stage_backward(params, next_conv(), g);
        const auto& pool = cache.pools[l - 1];
        g = maxpool2_backward(pool.input_shape, pool.argmax, g);
        auto gv = g.values();
        const auto sv = skip_grads[l - 1].values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += sv[i];
    }
    g = detail::conv_stage_backward(params, next_conv(), g);  // stem.conv2
    g = detail::conv_stage_backward(params, next_conv(), g);  // stem.conv1
    return g;
}

// ---- checkpoints --------------------------------------------------------------
//
// Layout (all integers and floats little-endian):
//   "GFNC" | u32 version | u64 input_size | u64 depth | u64 base_channels | u64 seed
//   | u32 array count | per array: u32 name length, UTF-8 name, u32 rank,
//   rank x u64 extents, product(extents) x f64 values

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

    std::uint64_t get(int width) {
        if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw IoError("truncated checkpoint: " + where_);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::string text(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw IoError("truncated checkpoint: " + where_);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    const std::string& where() const { return where_; }

private:
    const std::string& bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

} // namespace detail

template <typename T>
std::string encode_checkpoint(const UNetConfig& config, const Parameters<T>& params) {
    std::string out = "GFNC";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, config.input_size);
    detail::put_u64(out, config.depth);
    detail::put_u64(out, config.base_channels);
    detail::put_u64(out, config.seed);
    detail::put_u32(out, static_cast<std::uint32_t>(params.arrays().size()));
    for (const auto& a : params.arrays()) {
        detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        const auto extents = a.extents();
        detail::put_u32(out, static_cast<std::uint32_t>(extents.size()));
        for (std::size_t e : extents) detail::put_u64(out, e);
        for (T v : a.value.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    }
    return out;
}

template <typename T = double>
struct Checkpoint {
    UNetConfig config;
    Parameters<T> params;
};

/// Parses a checkpoint and checks its arrays against the topology implied by
/// the stored config.
template <typename T = double>
Checkpoint<T> decode_checkpoint(const std::string& bytes, const std::string& where = "<memory>") {
    detail::ByteReader in(bytes, where);
    if (in.text(4) != "GFNC") throw IoError("not a checkpoint (bad magic): " + where);
    if (const auto v = in.u32(); v != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(v) + ": " + where);
    }
    Checkpoint<T> ck;
    ck.config.input_size = in.u64();
    ck.config.depth = in.u64();
    ck.config.base_channels = in.u64();
    ck.config.seed = in.u64();
    try {
        ck.params = zero_parameters<T>(ck.config);
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("checkpoint config invalid (") + e.what() + "): " + where);
    }
    const std::uint32_t count = in.u32();
    if (count != ck.params.arrays().size()) throw IoError("checkpoint array count mismatch: " + where);
    for (auto& a : ck.params.arrays()) {
        const std::string name = in.text(in.u32());
        if (name != a.name) throw IoError("checkpoint array '" + name + "' where '" + a.name + "' expected: " + where);
        const std::uint32_t rank = in.u32();
        std::vector<std::size_t> extents(rank);
        for (auto& e : extents) e = in.u64();
        if (extents != a.extents()) throw IoError("checkpoint array '" + name + "' has wrong extents: " + where);
        for (T& v : a.value.values()) v = static_cast<T>(std::bit_cast<double>(in.u64()));
    }
    if (!in.done()) throw IoError("trailing bytes in checkpoint: " + where);
    return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const UNetConfig& config, const Parameters<T>& params) {
    const std::string bytes = encode_checkpoint(config, params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

template <typename T = double>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint<T>(bytes, path.string());
}

} // namespace gabornet
