#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "batchcur/error.hpp"

namespace batchcur {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

// Storage for buffers that Eigen maps. Vectorized reductions peel a prefix
// whose length depends on the start address, so a fixed alignment keeps the
// summation order, and therefore every result, independent of heap layout.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

// Rows are per-view embeddings.
using EmbeddingMatrix = Matrix<float>;

inline std::size_t shape_size(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

// Dense row-major tensor. data.size() always equals the product of shape.
template <class T>
struct Tensor {
    std::vector<int> shape;
    AlignedVector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {
        for (int d : shape)
            if (d < 0) throw ShapeError("negative tensor dimension in " + shape_string(shape));
    }

    int dim(std::size_t i) const { return shape.at(i); }
    std::size_t size() const noexcept { return data.size(); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
bool all_finite(const Matrix<T>& m) {
    return m.allFinite();
}

// Throws NumericError on a zero (or non-finite) row.
template <class T>
Matrix<T> l2_normalize_rows(const Matrix<T>& m) {
    Matrix<T> out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const T n = m.row(i).norm();
        if (!(n > T(0)) || !std::isfinite(static_cast<double>(n)))
            throw NumericError("cannot normalize embedding row " + std::to_string(i) + " with norm " +
                               std::to_string(static_cast<double>(n)));
        out.row(i) = m.row(i) / n;
    }
    return out;
}

}  // namespace batchcur
