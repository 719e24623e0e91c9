#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "semcom/error.hpp"

namespace semcom {

struct Pixel {
    std::int32_t x = 0;
    std::int32_t y = 0;

    // Row-major: y first, then x.
    friend constexpr auto operator<=>(const Pixel& a, const Pixel& b) {
        if (auto c = a.y <=> b.y; c != 0) return c;
        return a.x <=> b.x;
    }
    friend constexpr bool operator==(const Pixel&, const Pixel&) = default;
};

inline std::uint64_t pixel_key(const Pixel& p) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.y)) << 32) |
           static_cast<std::uint32_t>(p.x);
}

// Dense row-major 2D array; element (x, y) lives at y * width + x.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(std::size_t width, std::size_t height, T fill = T{})
        : width_(width), height_(height), data_(width * height, fill) {}
    Grid(std::size_t width, std::size_t height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (data_.size() != width_ * height_) {
            throw Error("grid data size does not match width*height");
        }
    }

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }
    const T& operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }

    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<T> data_;
};

}  // namespace semcom
