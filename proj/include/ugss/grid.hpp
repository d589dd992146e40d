#ifndef UGSS_GRID_HPP
#define UGSS_GRID_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ugss/errors.hpp"

namespace ugss {

// Axis order is always (z, y, x); z runs caudal -> cranial.
struct Shape3 {
    int z = 0;
    int y = 0;
    int x = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(z) * static_cast<std::size_t>(y) * static_cast<std::size_t>(x);
    }
    bool valid() const { return z >= 1 && y >= 1 && x >= 1; }
    bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);

struct Spacing {
    double z = 2.5;
    double y = 2.5;
    double x = 2.5;

    bool valid() const;
    bool operator==(const Spacing&) const = default;
};

template <typename T>
class Grid3 {
public:
    using value_type = T;

    Grid3() = default;
    explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
    Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw ShapeError("grid data size " + std::to_string(data_.size()) + " does not match shape " +
                             to_string(shape_));
        }
    }

    const Shape3& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * shape_.y + y) * shape_.x + x;
    }
    T& operator()(int z, int y, int x) { return data_[index(z, y, x)]; }
    const T& operator()(int z, int y, int x) const { return data_[index(z, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    // Contiguous z-slab [z0, z1).
    Grid3 slab(int z0, int z1) const {
        Grid3 out(Shape3{z1 - z0, shape_.y, shape_.x});
        const std::size_t plane = static_cast<std::size_t>(shape_.y) * shape_.x;
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(z0 * plane),
                  data_.begin() + static_cast<std::ptrdiff_t>(z1 * plane), out.data_.begin());
        return out;
    }

    bool operator==(const Grid3&) const = default;

private:
    Shape3 shape_{};
    std::vector<T> data_;
};

using FloatGrid = Grid3<float>;
using Mask = Grid3<std::uint8_t>;
using ClassMap = Grid3<std::uint8_t>;

enum class IntensityUnit { HU, Normalized };

std::string to_string(IntensityUnit u);
IntensityUnit intensity_unit_from_string(const std::string& s);

struct Volume {
    FloatGrid data;
    Spacing spacing;
    IntensityUnit unit = IntensityUnit::HU;

    const Shape3& shape() const { return data.shape(); }
    bool operator==(const Volume&) const = default;
};

std::size_t count_nonzero(const Mask& m);

}  // namespace ugss

#endif  // UGSS_GRID_HPP
