#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "gabornet/errors.hpp"

namespace gabornet {

/// Allocator with a fixed 64-byte alignment. Vectorized reductions peel a
/// prefix whose length depends on the address, so a fixed alignment keeps
/// floating-point summation order, and therefore results, reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense (batch, channels, height, width) array.
template <typename T>
class Tensor4 {
public:
    using value_type = T;
    using Shape = std::array<std::size_t, 4>;

    Tensor4() = default;

    explicit Tensor4(Shape shape, T fill = T{0}) : shape_(checked(shape)), data_(count(shape), fill) {}

    Tensor4(std::size_t b, std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
        : Tensor4(Shape{b, c, h, w}, fill) {}

    Tensor4(Shape shape, std::vector<T> values) : shape_(checked(shape)), data_(values.begin(), values.end()) {
        if (data_.size() != count(shape_)) throw DimensionError("tensor data length does not match extents");
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t batch() const noexcept { return shape_[0]; }
    std::size_t channels() const noexcept { return shape_[1]; }
    std::size_t height() const noexcept { return shape_[2]; }
    std::size_t width() const noexcept { return shape_[3]; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Elements in one (channel, height, width) sample.
    std::size_t sample_size() const noexcept { return shape_[1] * shape_[2] * shape_[3]; }
    std::size_t plane_size() const noexcept { return shape_[2] * shape_[3]; }

    T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T* sample(std::size_t b) noexcept { return data_.data() + b * sample_size(); }
    const T* sample(std::size_t b) const noexcept { return data_.data() + b * sample_size(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const Tensor4&) const = default;

private:
    static std::size_t count(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }
    static Shape checked(const Shape& s) {
        for (std::size_t e : s) {
            if (e == 0) throw DimensionError("tensor extents must be >= 1");
        }
        return s;
    }

    Shape shape_{};
    AlignedVector<T> data_;
};

template <typename T>
std::string shape_string(const Tensor4<T>& t) {
    const auto& s = t.shape();
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
           std::to_string(s[3]) + ")";
}

} // namespace gabornet
