#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "gabornet/errors.hpp"

namespace gabornet {

enum class Direction { forward, inverse };

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

/// Iterative radix-2 Cooley-Tukey transform of a fixed power-of-two length.
///
/// Twiddles are evaluated directly with cos/sin per index (no recurrence) so
/// that round-trip error stays at the few-ulp level for the sizes used here.
/// Transforms are unnormalized in both directions; callers apply 1/N.
class RadixTwoFft {
public:
    explicit RadixTwoFft(std::size_t n) : n_(n), bitrev_(n), twiddles_(n / 2) {
        if (!is_power_of_two(n)) {
            throw DimensionError("FFT length " + std::to_string(n) + " is not a power of two");
        }
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b) {
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            }
            bitrev_[i] = r;
        }
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            twiddles_[k] = {std::cos(angle), std::sin(angle)};
        }
    }

    std::size_t size() const noexcept { return n_; }

    void transform(std::span<std::complex<double>> data, Direction dir) const {
        if (data.size() != n_) throw DimensionError("FFT buffer length mismatch");
        for (std::size_t i = 0; i < n_; ++i) {
            if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
        }
        const bool inverse = dir == Direction::inverse;
        for (std::size_t len = 2; len <= n_; len <<= 1) {
            const std::size_t half = len / 2;
            const std::size_t stride = n_ / len;
            for (std::size_t start = 0; start < n_; start += len) {
                for (std::size_t j = 0; j < half; ++j) {
                    std::complex<double> w = twiddles_[j * stride];
                    if (inverse) w = std::conj(w);
                    const std::complex<double> u = data[start + j];
                    const std::complex<double> v = data[start + j + half] * w;
                    data[start + j] = u + v;
                    data[start + j + half] = u - v;
                }
            }
        }
    }

private:
    std::size_t n_;
    std::vector<std::size_t> bitrev_;
    std::vector<std::complex<double>> twiddles_;
};

/// In-place 2-D transform of a row-major n-by-n buffer. Unnormalized.
inline void fft2_inplace(std::span<std::complex<double>> data, std::size_t n, Direction dir) {
    if (data.size() != n * n) throw DimensionError("2-D FFT buffer is not n*n");
    const RadixTwoFft plan(n);
    for (std::size_t r = 0; r < n; ++r) plan.transform(data.subspan(r * n, n), dir);
    std::vector<std::complex<double>> column(n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t r = 0; r < n; ++r) column[r] = data[r * n + c];
        plan.transform(column, dir);
        for (std::size_t r = 0; r < n; ++r) data[r * n + c] = column[r];
    }
}

} // namespace gabornet
