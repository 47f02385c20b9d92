#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace mcw::nn {

/// Dense n-dimensional array, row-major.
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(element_count(shape), T{0});
    }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return data.size(); }

    bool operator==(const TensorT&) const = default;
};

using Tensor = TensorT<float>;

} // namespace mcw::nn
