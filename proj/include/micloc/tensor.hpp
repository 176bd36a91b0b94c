#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "micloc/error.hpp"

namespace micloc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape);

// Dense row-major array of up to four axes (batch, height, width, channels).
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> values;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), values(shape_size(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v))
    {
        if (values.size() != shape_size(shape))
            fail(ErrorCode::dimension_mismatch, "tensor of shape " + shape_string(shape) + " given " +
                                                    std::to_string(values.size()) + " values");
    }

    std::size_t size() const noexcept { return values.size(); }
    T* data() noexcept { return values.data(); }
    const T* data() const noexcept { return values.data(); }
    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    template <typename U>
    Tensor<U> cast() const
    {
        return Tensor<U>(shape, std::vector<U>(values.begin(), values.end()));
    }

    bool operator==(const Tensor&) const = default;
};

} // namespace micloc
