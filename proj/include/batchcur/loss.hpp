#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "batchcur/error.hpp"
#include "batchcur/tensor.hpp"

namespace batchcur {

template <class T>
struct LossResult {
    T loss;
    Matrix<T> grad;  // dL/dz, same shape as z
};

// NT-Xent over 2N rows where rows 2i and 2i+1 are a positive pair.
//
//   l(i, j) = -log( exp(s_ij / t) / sum_{k != i} exp(s_ik / t) ),
//
// with s the cosine similarity; the loss is the mean over all 2N ordered
// positive pairs. The gradient is taken with respect to the raw
// (unnormalized) rows, so it includes the normalization Jacobian.
template <class T>
LossResult<T> nt_xent_loss(const Matrix<T>& z, T temperature) {
    if (!(temperature > T(0))) throw ParameterError("temperature must be > 0");
    const Eigen::Index m = z.rows();
    if (m < 2 || m % 2 != 0) throw ShapeError("nt_xent_loss needs 2N rows with N >= 1, got " + std::to_string(m));
    if (!z.allFinite()) throw NumericError("non-finite embedding passed to nt_xent_loss");

    Eigen::Matrix<T, Eigen::Dynamic, 1> norms(m);
    Matrix<T> u(m, z.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        norms(i) = z.row(i).norm();
        if (!(norms(i) > T(0))) throw NumericError("zero-norm embedding row " + std::to_string(i));
        u.row(i) = z.row(i) / norms(i);
    }

    const Matrix<T> logits = (u * u.transpose()) / temperature;
    // dL/dlogits, diagonal excluded.
    Matrix<T> g = Matrix<T>::Zero(m, m);
    T total = T(0);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index pos = i ^ 1;
        T peak = -std::numeric_limits<T>::infinity();
        for (Eigen::Index k = 0; k < m; ++k)
            if (k != i) peak = std::max(peak, logits(i, k));
        T sum = T(0);
        for (Eigen::Index k = 0; k < m; ++k)
            if (k != i) sum += std::exp(logits(i, k) - peak);
        const T lse = peak + std::log(sum);
        total += lse - logits(i, pos);
        for (Eigen::Index k = 0; k < m; ++k)
            if (k != i) g(i, k) = std::exp(logits(i, k) - lse);
        g(i, pos) -= T(1);
    }
    const T scale = T(1) / static_cast<T>(m);
    g *= scale;

    // logits = u u^T / t  =>  dL/du = (g + g^T) u / t.
    const Matrix<T> du = ((g + g.transpose()) * u) / temperature;
    Matrix<T> dz(m, z.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        const T radial = u.row(i).dot(du.row(i));
        dz.row(i) = (du.row(i) - radial * u.row(i)) / norms(i);
    }
    return {total * scale, std::move(dz)};
}

}  // namespace batchcur
