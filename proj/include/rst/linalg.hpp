#pragma once

#include <Eigen/Core>
#include <random>

namespace rst {

// Row-major because every per-token operation (layer norm, softmax,
// embedding gather) walks rows.
template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Mat<Real> randn(int rows, int cols, Real stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat<Real> m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            m(i, j) = static_cast<Real>(dist(rng)) * stddev;
    return m;
}

// Xavier/Glorot scaling for linear maps.
template <typename Real>
Mat<Real> glorot(int rows, int cols, std::mt19937_64& rng) {
    const Real s = static_cast<Real>(std::sqrt(2.0 / (rows + cols)));
    return randn<Real>(rows, cols, s, rng);
}

}  // namespace rst
