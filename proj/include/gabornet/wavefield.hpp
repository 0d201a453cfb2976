#pragma once

// Scalar angular-spectrum propagation on square power-of-two grids.
//
// Conventions (fixed, relied on by stored datasets):
//   * forward DFT uses exp(-i...) and is unnormalized; the inverse carries 1/N^2
//   * frequency sample m maps to index m for m < N/2 and m - N otherwise
//     (wraparound order, no centering shift)
//   * k_x = 2*pi*m_x / (N * pitch); evanescent samples (k_x^2 + k_y^2 > k^2)
//     are set to zero in the transfer function
//   * no padding or apodization; propagation is circular on the grid

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gabornet/errors.hpp"
#include "gabornet/fft.hpp"

namespace gabornet {

using complexd = std::complex<double>;

/// Complex wave field on an n-by-n grid, row-major.
class ComplexField {
public:
    explicit ComplexField(std::size_t n) : n_(checked_side(n)), data_(n * n) {}

    ComplexField(std::size_t n, std::vector<complexd> values) : n_(checked_side(n)), data_(std::move(values)) {
        if (data_.size() != n_ * n_) throw DimensionError("ComplexField data length is not n*n");
        for (const auto& v : data_) {
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
                throw ParameterError("ComplexField values must be finite");
            }
        }
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t size() const noexcept { return data_.size(); }

    complexd& at(std::size_t row, std::size_t col) { return data_[row * n_ + col]; }
    const complexd& at(std::size_t row, std::size_t col) const { return data_[row * n_ + col]; }

    std::span<complexd> values() noexcept { return data_; }
    std::span<const complexd> values() const noexcept { return data_; }

    bool operator==(const ComplexField&) const = default;

private:
    static std::size_t checked_side(std::size_t n) {
        if (n < 2 || !is_power_of_two(n)) {
            throw DimensionError("grid side " + std::to_string(n) + " must be a power of two >= 2");
        }
        return n;
    }

    std::size_t n_;
    std::vector<complexd> data_;
};

/// Non-negative real image on an n-by-n grid, row-major. Immutable once built.
class RealImage {
public:
    explicit RealImage(std::size_t n) : n_(n), data_(n * n, 0.0) {
        if (n == 0) throw DimensionError("image side must be >= 1");
    }

    RealImage(std::size_t n, std::vector<double> values) : n_(n), data_(std::move(values)) {
        if (n == 0) throw DimensionError("image side must be >= 1");
        if (data_.size() != n * n) throw DimensionError("RealImage data length is not n*n");
        for (double v : data_) {
            if (!std::isfinite(v) || v < 0.0) throw ParameterError("RealImage values must be finite and >= 0");
        }
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t size() const noexcept { return data_.size(); }
    double at(std::size_t row, std::size_t col) const { return data_[row * n_ + col]; }
    std::span<const double> values() const noexcept { return data_; }

    double max() const { return *std::max_element(data_.begin(), data_.end()); }

    /// Index of the first maximum in row-major order.
    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(data_.begin(), data_.end()) - data_.begin());
    }

    bool operator==(const RealImage&) const = default;

private:
    std::size_t n_;
    std::vector<double> data_;
};

/// Optical setup: wavelength and pitch in meters, signed distance z in meters.
struct PropagationParams {
    double wavelength = 658e-9;
    double pixel_pitch = 5.5e-6;
    std::size_t n = 512;
    double z = 0.065;

    double wavenumber() const noexcept { return 2.0 * std::numbers::pi / wavelength; }

    PropagationParams with_z(double distance) const {
        PropagationParams p = *this;
        p.z = distance;
        return p;
    }

    void validate() const {
        if (!(wavelength > 0.0) || !std::isfinite(wavelength)) throw ParameterError("wavelength must be > 0");
        if (!(pixel_pitch > 0.0) || !std::isfinite(pixel_pitch)) throw ParameterError("pixel pitch must be > 0");
        if (!std::isfinite(z)) throw ParameterError("distance must be finite");
        if (n < 2 || !is_power_of_two(n)) {
            throw DimensionError("grid side " + std::to_string(n) + " must be a power of two >= 2");
        }
    }
};

/// Signed frequency index of DFT sample m on an n-point grid.
constexpr long frequency_index(std::size_t m, std::size_t n) noexcept {
    return m < n / 2 ? static_cast<long>(m) : static_cast<long>(m) - static_cast<long>(n);
}

inline ComplexField dft2(const ComplexField& field, Direction dir) {
    ComplexField out = field;
    fft2_inplace(out.values(), out.n(), dir);
    if (dir == Direction::inverse) {
        const double scale = 1.0 / static_cast<double>(out.size());
        for (auto& v : out.values()) v *= scale;
    }
    return out;
}

/// Frequency-domain factor exp(i k_z z), zero on evanescent samples.
inline ComplexField transfer_function(const PropagationParams& params) {
    params.validate();
    const std::size_t n = params.n;
    const double k = params.wavenumber();
    const double k2 = k * k;
    const double dk = 2.0 * std::numbers::pi / (static_cast<double>(n) * params.pixel_pitch);
    ComplexField t(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double ky = dk * static_cast<double>(frequency_index(r, n));
        for (std::size_t c = 0; c < n; ++c) {
            const double kx = dk * static_cast<double>(frequency_index(c, n));
            const double radicand = k2 - kx * kx - ky * ky;
            if (radicand < 0.0) continue;
            const double phase = std::sqrt(radicand) * params.z;
            t.at(r, c) = {std::cos(phase), std::sin(phase)};
        }
    }
    return t;
}

inline ComplexField propagate(const ComplexField& field, const PropagationParams& params) {
    params.validate();
    if (field.n() != params.n) {
        throw DimensionError("field side " + std::to_string(field.n()) + " != propagation grid " +
                             std::to_string(params.n));
    }
    ComplexField spectrum = dft2(field, Direction::forward);
    const ComplexField t = transfer_function(params);
    auto s = spectrum.values();
    auto tv = t.values();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= tv[i];
    return dft2(spectrum, Direction::inverse);
}

/// Pointwise modulus.
inline RealImage rectify(const ComplexField& field) {
    std::vector<double> out(field.size());
    std::transform(field.values().begin(), field.values().end(), out.begin(),
                   [](const complexd& v) { return std::abs(v); });
    return RealImage(field.n(), std::move(out));
}

/// Real image as a complex field with zero imaginary part.
inline ComplexField lift(const RealImage& image) {
    std::vector<complexd> out(image.size());
    std::transform(image.values().begin(), image.values().end(), out.begin(),
                   [](double v) { return complexd{v, 0.0}; });
    return ComplexField(image.n(), std::move(out));
}

/// Classical magnitude hologram: |propagate(I, +z)|. Requires z > 0.
inline RealImage reconstruct_hologram(const RealImage& interferogram, const PropagationParams& params) {
    if (!(params.z > 0.0)) throw ParameterError("reconstruction distance must be > 0");
    if (interferogram.n() != params.n) {
        throw DimensionError("interferogram side " + std::to_string(interferogram.n()) +
                             " != propagation grid " + std::to_string(params.n));
    }
    return rectify(propagate(lift(interferogram), params));
}

/// Scales an image so that its maximum is exactly 1; all-zero images pass through.
inline RealImage max_normalized(const RealImage& image) {
    const double peak = image.max();
    if (peak == 0.0) return image;
    std::vector<double> out(image.values().begin(), image.values().end());
    for (double& v : out) v /= peak;
    // Division by the peak maps the peak itself to exactly 1.0.
    return RealImage(image.n(), std::move(out));
}

} // namespace gabornet
