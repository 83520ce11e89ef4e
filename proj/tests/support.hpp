#pragma once

#include <cmath>

#include "mmica/datakit.hpp"
#include "mmica/rng.hpp"
#include "mmica/symlin.hpp"

namespace mmica::testing {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols) {
    Matrix M(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) M(i, j) = rng.normal();
    }
    return M;
}

// Well-conditioned random square matrix: I + 0.3 * gaussian.
inline Matrix random_invertible(Rng& rng, Index p) {
    return Matrix::Identity(p, p) + 0.3 * random_matrix(rng, p, p);
}

inline Matrix random_spd(Rng& rng, Index p) {
    const Matrix B = random_matrix(rng, p, p);
    return B * B.transpose() / static_cast<double>(p) + 0.5 * Matrix::Identity(p, p);
}

inline Matrix random_laplace(Rng& rng, Index p, Index n) {
    Matrix S(p, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < p; ++i) S(i, j) = laplace_draw(rng);
    }
    return S;
}

inline double max_abs(const Matrix& M) { return M.cwiseAbs().maxCoeff(); }

} // namespace mmica::testing
