#pragma once

#include "retseg/core.hpp"

namespace retseg {

/// Squared Euclidean distance with a fixed four-way accumulation order.
/// The result depends only on the values, never on memory alignment, so every
/// search path that calls this kernel sees bit-identical distances.
template <typename Scalar>
Scalar squared_distance(const Scalar* a, const Scalar* b, Index dim)
{
    Scalar acc[4] = {Scalar(0), Scalar(0), Scalar(0), Scalar(0)};
    Index i = 0;
    for (; i + 4 <= dim; i += 4) {
        for (int lane = 0; lane < 4; ++lane) {
            const Scalar diff = a[i + lane] - b[i + lane];
            acc[lane] += diff * diff;
        }
    }
    for (; i < dim; ++i) {
        const Scalar diff = a[i] - b[i];
        acc[0] += diff * diff;
    }
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar squared_distance(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b)
{
    using Scalar = typename DerivedA::Scalar;
    // evaluate into contiguous storage so rows of row-major matrices and
    // plain vectors take the same path
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> va = a.derived().transpose().reshaped();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vb = b.derived().transpose().reshaped();
    if (va.size() != vb.size()) throw Error("distance between vectors of different dimension");
    return squared_distance(va.data(), vb.data(), va.size());
}

}  // namespace retseg
