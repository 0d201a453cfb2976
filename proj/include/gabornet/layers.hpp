#pragma once

// Forward/backward kernels for the UNet building blocks. Every backward
// function returns gradients for a single call (no accumulation); reductions
// over the batch run in ascending batch order so results are reproducible.
//
// Weight layouts:
//   conv2d         (out_channels, in_channels, k, k), odd k, zero padding k/2
//   convtranspose2 (in_channels, out_channels, 2, 2), stride 2

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gabornet/errors.hpp"
#include "gabornet/tensor.hpp"

namespace gabornet {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixView = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>>;

namespace detail {

// cols has (channels * k * k) rows and (h * w) columns.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, T* cols) {
    const long pad = static_cast<long>(k / 2);
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = image + c * hw;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((c * k + ky) * k + kx) * hw;
                const long dy = static_cast<long>(ky) - pad;
                const long dx = static_cast<long>(kx) - pad;
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y) + dy;
                    T* dst = row + y * w;
                    if (sy < 0 || sy >= static_cast<long>(h)) {
                        std::fill(dst, dst + w, T{0});
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(sy) * w;
                    const long x0 = std::max(0L, -dx);
                    const long x1 = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
                    std::fill(dst, dst + x0, T{0});
                    std::copy(src + x0 + dx, src + x1 + dx, dst + x0);
                    std::fill(dst + x1, dst + w, T{0});
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates cols back into image (which must be zeroed).
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, T* image) {
    const long pad = static_cast<long>(k / 2);
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c) {
        T* plane = image + c * hw;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((c * k + ky) * k + kx) * hw;
                const long dy = static_cast<long>(ky) - pad;
                const long dx = static_cast<long>(kx) - pad;
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y) + dy;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    const T* src = row + y * w;
                    T* dst = plane + static_cast<std::size_t>(sy) * w;
                    const long x0 = std::max(0L, -dx);
                    const long x1 = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
                    for (long x = x0; x < x1; ++x) dst[x + dx] += src[x];
                }
            }
        }
    }
}

} // namespace detail

// ---- conv2d ---------------------------------------------------------------

template <typename T>
struct Conv2dGrads {
    Tensor4<T> input;
    Tensor4<T> weight;
    std::vector<T> bias;
};

template <typename T>
void check_conv2d(const Tensor4<T>& input, const Tensor4<T>& weight, std::size_t bias_size) {
    if (weight.height() != weight.width() || weight.height() % 2 == 0) {
        throw DimensionError("conv2d kernel must be square with odd size, got " + shape_string(weight));
    }
    if (weight.channels() != input.channels()) {
        throw DimensionError("conv2d channel mismatch: input " + shape_string(input) + " vs kernel " +
                             shape_string(weight));
    }
    if (bias_size != weight.batch()) throw DimensionError("conv2d bias length != output channels");
}

/// Cross-correlation with stride 1 and zero padding k/2 (same size output).
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Tensor4<T>& weight, std::span<const T> bias) {
    check_conv2d(input, weight, bias.size());
    const std::size_t cin = input.channels(), cout = weight.batch(), k = weight.height();
    const std::size_t h = input.height(), w = input.width(), hw = h * w, taps = cin * k * k;
    Tensor4<T> out(input.batch(), cout, h, w);
    ConstMatrixView<T> wm(weight.data(), static_cast<long>(cout), static_cast<long>(taps));
    AlignedVector<T> cols(k == 1 ? 0 : taps * hw);
    for (std::size_t b = 0; b < input.batch(); ++b) {
        const T* src = input.sample(b);
        if (k != 1) {
            detail::im2col(src, cin, h, w, k, cols.data());
            src = cols.data();
        }
        ConstMatrixView<T> cm(src, static_cast<long>(taps), static_cast<long>(hw));
        MatrixView<T> om(out.sample(b), static_cast<long>(cout), static_cast<long>(hw));
        om.noalias() = wm * cm;
        for (std::size_t o = 0; o < cout; ++o) om.row(static_cast<long>(o)).array() += bias[o];
    }
    return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& weight, const Tensor4<T>& grad_out) {
    check_conv2d(input, weight, weight.batch());
    const std::size_t cin = input.channels(), cout = weight.batch(), k = weight.height();
    const std::size_t h = input.height(), w = input.width(), hw = h * w, taps = cin * k * k;
    if (grad_out.shape() != typename Tensor4<T>::Shape{input.batch(), cout, h, w}) {
        throw DimensionError("conv2d upstream gradient has shape " + shape_string(grad_out));
    }
    Conv2dGrads<T> g{Tensor4<T>(input.shape()), Tensor4<T>(weight.shape()), std::vector<T>(cout, T{0})};
    ConstMatrixView<T> wm(weight.data(), static_cast<long>(cout), static_cast<long>(taps));
    MatrixView<T> gw(g.weight.data(), static_cast<long>(cout), static_cast<long>(taps));
    AlignedVector<T> cols(k == 1 ? 0 : taps * hw);
    AlignedVector<T> gcols(k == 1 ? 0 : taps * hw);
    for (std::size_t b = 0; b < input.batch(); ++b) {
        const T* src = input.sample(b);
        if (k != 1) {
            detail::im2col(src, cin, h, w, k, cols.data());
            src = cols.data();
        }
        ConstMatrixView<T> cm(src, static_cast<long>(taps), static_cast<long>(hw));
        ConstMatrixView<T> go(grad_out.sample(b), static_cast<long>(cout), static_cast<long>(hw));
        gw.noalias() += go * cm.transpose();
        for (std::size_t o = 0; o < cout; ++o) g.bias[o] += go.row(static_cast<long>(o)).sum();
        if (k == 1) {
            MatrixView<T> gi(g.input.sample(b), static_cast<long>(taps), static_cast<long>(hw));
            gi.noalias() = wm.transpose() * go;
        } else {
            MatrixView<T> gc(gcols.data(), static_cast<long>(taps), static_cast<long>(hw));
            gc.noalias() = wm.transpose() * go;
            detail::col2im(gcols.data(), cin, h, w, k, g.input.sample(b));
        }
    }
    return g;
}

// ---- relu -----------------------------------------------------------------

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input) {
    Tensor4<T> out = input;
    for (T& v : out.values()) v = v > T{0} ? v : T{0};
    return out;
}

/// Passes the gradient where input > 0; zero at input == 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out) {
    if (input.shape() != grad_out.shape()) throw DimensionError("relu gradient shape mismatch");
    Tensor4<T> g(input.shape());
    const auto in = input.values();
    const auto go = grad_out.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = in[i] > T{0} ? go[i] : T{0};
    return g;
}

// ---- maxpool2 -------------------------------------------------------------

template <typename T>
struct PoolResult {
    Tensor4<T> output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

/// 2x2 window, stride 2. Ties keep the first element in row-major window order.
template <typename T>
PoolResult<T> maxpool2(const Tensor4<T>& input) {
    if (input.height() % 2 != 0 || input.width() % 2 != 0) {
        throw DimensionError("maxpool2 needs even spatial extents, got " + shape_string(input));
    }
    const std::size_t oh = input.height() / 2, ow = input.width() / 2, w = input.width();
    PoolResult<T> r{Tensor4<T>(input.batch(), input.channels(), oh, ow), {}};
    r.argmax.resize(r.output.size());
    const T* in = input.data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < input.batch() * input.channels(); ++plane) {
        const std::size_t base = plane * input.plane_size();
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x, ++o) {
                const std::size_t i0 = base + 2 * y * w + 2 * x;
                std::size_t best = i0;
                for (std::size_t cand : {i0 + 1, i0 + w, i0 + w + 1}) {
                    if (in[cand] > in[best]) best = cand;
                }
                r.output.data()[o] = in[best];
                r.argmax[o] = best;
            }
        }
    }
    return r;
}

template <typename T>
Tensor4<T> maxpool2_backward(const typename Tensor4<T>::Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor4<T>& grad_out) {
    if (argmax.size() != grad_out.size()) throw DimensionError("maxpool2 gradient/argmax size mismatch");
    Tensor4<T> g(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) g.data()[argmax[o]] += grad_out.data()[o];
    return g;
}

// ---- convtranspose2 -------------------------------------------------------

template <typename T>
void check_convtranspose2(const Tensor4<T>& input, const Tensor4<T>& weight, std::size_t bias_size) {
    if (weight.height() != 2 || weight.width() != 2) {
        throw DimensionError("convtranspose2 kernel must be 2x2, got " + shape_string(weight));
    }
    if (weight.batch() != input.channels()) {
        throw DimensionError("convtranspose2 channel mismatch: input " + shape_string(input) + " vs kernel " +
                             shape_string(weight));
    }
    if (bias_size != weight.channels()) throw DimensionError("convtranspose2 bias length != output channels");
}

/// Stride-2 transposed convolution with a 2x2 kernel: each input pixel
/// paints one disjoint 2x2 output block.
template <typename T>
Tensor4<T> convtranspose2(const Tensor4<T>& input, const Tensor4<T>& weight, std::span<const T> bias) {
    check_convtranspose2(input, weight, bias.size());
    const std::size_t cin = input.channels(), cout = weight.channels();
    const std::size_t h = input.height(), w = input.width(), hw = h * w;
    Tensor4<T> out(input.batch(), cout, 2 * h, 2 * w);
    ConstMatrixView<T> wm(weight.data(), static_cast<long>(cin), static_cast<long>(cout * 4));
    RowMatrix<T> blocks(static_cast<long>(cout * 4), static_cast<long>(hw));
    for (std::size_t b = 0; b < input.batch(); ++b) {
        ConstMatrixView<T> xm(input.sample(b), static_cast<long>(cin), static_cast<long>(hw));
        blocks.noalias() = wm.transpose() * xm;
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t d = 0; d < 4; ++d) {
                const T* row = blocks.data() + (o * 4 + d) * hw;
                const std::size_t dy = d / 2, dx = d % 2;
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) out(b, o, 2 * y + dy, 2 * x + dx) = row[y * w + x] + bias[o];
                }
            }
        }
    }
    return out;
}

template <typename T>
Conv2dGrads<T> convtranspose2_backward(const Tensor4<T>& input, const Tensor4<T>& weight,
                                       const Tensor4<T>& grad_out) {
    check_convtranspose2(input, weight, weight.channels());
    const std::size_t cin = input.channels(), cout = weight.channels();
    const std::size_t h = input.height(), w = input.width(), hw = h * w;
    if (grad_out.shape() != typename Tensor4<T>::Shape{input.batch(), cout, 2 * h, 2 * w}) {
        throw DimensionError("convtranspose2 upstream gradient has shape " + shape_string(grad_out));
    }
    Conv2dGrads<T> g{Tensor4<T>(input.shape()), Tensor4<T>(weight.shape()), std::vector<T>(cout, T{0})};
    ConstMatrixView<T> wm(weight.data(), static_cast<long>(cin), static_cast<long>(cout * 4));
    MatrixView<T> gw(g.weight.data(), static_cast<long>(cin), static_cast<long>(cout * 4));
    RowMatrix<T> blocks(static_cast<long>(cout * 4), static_cast<long>(hw));
    for (std::size_t b = 0; b < input.batch(); ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t d = 0; d < 4; ++d) {
                T* row = blocks.data() + (o * 4 + d) * hw;
                const std::size_t dy = d / 2, dx = d % 2;
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) row[y * w + x] = grad_out(b, o, 2 * y + dy, 2 * x + dx);
                }
            }
            g.bias[o] += blocks.middleRows(static_cast<long>(o * 4), 4).sum();
        }
        ConstMatrixView<T> xm(input.sample(b), static_cast<long>(cin), static_cast<long>(hw));
        gw.noalias() += xm * blocks.transpose();
        MatrixView<T> gi(g.input.sample(b), static_cast<long>(cin), static_cast<long>(hw));
        gi.noalias() = wm * blocks;
    }
    return g;
}

// ---- channel concatenation ------------------------------------------------

/// Stacks channels, a first then b.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width()) {
        throw DimensionError("concat_channels mismatch: " + shape_string(a) + " vs " + shape_string(b));
    }
    Tensor4<T> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
    for (std::size_t n = 0; n < a.batch(); ++n) {
        T* dst = out.sample(n);
        dst = std::copy(a.sample(n), a.sample(n) + a.sample_size(), dst);
        std::copy(b.sample(n), b.sample(n) + b.sample_size(), dst);
    }
    return out;
}

/// Inverse of concat_channels: the first `first_channels` go to the first part.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& t, std::size_t first_channels) {
    if (first_channels == 0 || first_channels >= t.channels()) {
        throw DimensionError("split_channels boundary outside (0, channels)");
    }
    Tensor4<T> a(t.batch(), first_channels, t.height(), t.width());
    Tensor4<T> b(t.batch(), t.channels() - first_channels, t.height(), t.width());
    for (std::size_t n = 0; n < t.batch(); ++n) {
        const T* src = t.sample(n);
        std::copy(src, src + a.sample_size(), a.sample(n));
        std::copy(src + a.sample_size(), src + t.sample_size(), b.sample(n));
    }
    return {std::move(a), std::move(b)};
}

// ---- loss -----------------------------------------------------------------

template <typename T>
struct LossResult {
    T loss;
    Tensor4<T> grad;
};

/// Mean over all elements of (p - t)^2, with gradient 2 (p - t) / count.
template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& prediction, const Tensor4<T>& target) {
    if (prediction.shape() != target.shape()) {
        throw DimensionError("mse_loss shape mismatch: " + shape_string(prediction) + " vs " + shape_string(target));
    }
    const T count = static_cast<T>(prediction.size());
    LossResult<T> r{T{0}, Tensor4<T>(prediction.shape())};
    const auto p = prediction.values();
    const auto t = target.values();
    auto g = r.grad.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T d = p[i] - t[i];
        r.loss += d * d;
        g[i] = T{2} * d / count;
    }
    r.loss /= count;
    return r;
}

} // namespace gabornet
