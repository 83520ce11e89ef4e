#include "mmica/symlin.hpp"

#include <cmath>
#include <string>

#include "mmica/errors.hpp"

namespace mmica {

PackedSym PackedSym::identity(Index dim) {
    PackedSym out(dim);
    for (Index k = 0; k < dim; ++k) out(k, k) = 1.0;
    return out;
}

PackedSym PackedSym::from_dense(const Matrix& dense) {
    if (dense.rows() != dense.cols()) {
        throw DimensionMismatch("PackedSym::from_dense: matrix is not square");
    }
    PackedSym out(dense.rows());
    std::size_t idx = 0;
    for (Index k = 0; k < dense.rows(); ++k) {
        for (Index l = 0; l <= k; ++l) out.data_[idx++] = dense(k, l);
    }
    return out;
}

Matrix PackedSym::to_dense() const {
    Matrix out(dim_, dim_);
    std::size_t idx = 0;
    for (Index k = 0; k < dim_; ++k) {
        for (Index l = 0; l <= k; ++l) {
            out(k, l) = data_[idx];
            out(l, k) = data_[idx];
            ++idx;
        }
    }
    return out;
}

Vector PackedSym::diagonal() const {
    Vector d(dim_);
    for (Index k = 0; k < dim_; ++k) d(k) = data_[offset(k, k)];
    return d;
}

void PackedSym::scale(double factor) {
    for (double& v : data_) v *= factor;
}

void sym_rank1_update(PackedSym& A, std::span<const double> x, double w) {
    const Index p = A.dim();
    if (static_cast<Index>(x.size()) != p) {
        throw DimensionMismatch("sym_rank1_update: vector length " + std::to_string(x.size()) +
                                " does not match dimension " + std::to_string(p));
    }
    std::span<double> a = A.data();
    std::size_t idx = 0;
    for (Index k = 0; k < p; ++k) {
        const double wx = w * x[static_cast<std::size_t>(k)];
        for (Index l = 0; l <= k; ++l) a[idx++] += wx * x[static_cast<std::size_t>(l)];
    }
}

PackedSym congruent(const Matrix& W, const PackedSym& A) {
    if (W.rows() != W.cols() || W.cols() != A.dim()) {
        throw DimensionMismatch("congruent: W must be p x p with p = dim(A)");
    }
    const Matrix WA = W * A.to_dense();
    const Index p = W.rows();
    PackedSym K(p);
    for (Index k = 0; k < p; ++k) {
        for (Index l = 0; l <= k; ++l) K(k, l) = WA.row(k).dot(W.row(l));
    }
    return K;
}

std::optional<PackedSym> cholesky_factor(const PackedSym& K) {
    const Index p = K.dim();
    PackedSym L(p);
    for (Index j = 0; j < p; ++j) {
        double diag = K(j, j);
        for (Index m = 0; m < j; ++m) diag -= L(j, m) * L(j, m);
        if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
        const double ljj = std::sqrt(diag);
        L(j, j) = ljj;
        for (Index k = j + 1; k < p; ++k) {
            double s = K(k, j);
            for (Index m = 0; m < j; ++m) s -= L(k, m) * L(j, m);
            L(k, j) = s / ljj;
        }
    }
    return L;
}

Vector cholesky_solve(const PackedSym& L, const Vector& b) {
    const Index p = L.dim();
    Vector y(p);
    for (Index k = 0; k < p; ++k) {
        double s = b(k);
        for (Index m = 0; m < k; ++m) s -= L(k, m) * y(m);
        y(k) = s / L(k, k);
    }
    Vector x(p);
    for (Index k = p - 1; k >= 0; --k) {
        double s = y(k);
        for (Index m = k + 1; m < p; ++m) s -= L(m, k) * x(m);
        x(k) = s / L(k, k);
    }
    return x;
}

namespace {

double residual_norm(const Matrix& K, const Vector& z, Index i) {
    Vector r = K * z;
    r(i) -= 1.0;
    return r.norm();
}

RowSolve solve_row_cholesky(const PackedSym& K, const Matrix& dense, Index i, int pcg_iterations) {
    auto L = cholesky_factor(K);
    if (!L) {
        throw NotPositiveDefinite("solve_row: matrix is not positive definite (row " + std::to_string(i) + ")");
    }
    Vector e = Vector::Zero(K.dim());
    e(i) = 1.0;
    RowSolve out;
    out.z = cholesky_solve(*L, e);
    out.report.method = SolveMethod::cholesky;
    out.report.iterations = pcg_iterations;
    out.report.relative_residual = residual_norm(dense, out.z, i);
    return out;
}

} // namespace

RowSolve solve_row(const PackedSym& K, Index i, const SolverOptions& opts) {
    const Index p = K.dim();
    if (i < 0 || i >= p) {
        throw DimensionMismatch("solve_row: row index " + std::to_string(i) + " out of range");
    }
    const int max_iter = opts.max_iter > 0 ? opts.max_iter : static_cast<int>(2 * p);
    const Matrix dense = K.to_dense();
    const Vector diag = K.diagonal();
    if (!(diag.array() > 0.0).all() || !diag.allFinite()) {
        return solve_row_cholesky(K, dense, i, 0);
    }

    // ||e_i|| = 1, so absolute and relative residuals coincide.
    Vector x = Vector::Zero(p);
    Vector r = Vector::Zero(p);
    r(i) = 1.0;
    Vector z = r.cwiseQuotient(diag);
    Vector s = z;
    double rz = r.dot(z);
    int iterations = 0;
    bool converged = false;
    for (int k = 1; k <= max_iter; ++k) {
        const Vector Ks = dense * s;
        const double sKs = s.dot(Ks);
        if (!(sKs > 0.0) || !std::isfinite(sKs)) break;
        const double step = rz / sKs;
        x += step * s;
        r -= step * Ks;
        iterations = k;
        if (r.norm() <= opts.tol) {
            converged = true;
            break;
        }
        z = r.cwiseQuotient(diag);
        const double rz_next = r.dot(z);
        s = z + (rz_next / rz) * s;
        rz = rz_next;
    }

    if (converged) {
        const double res = residual_norm(dense, x, i);
        if (res <= opts.tol) {
            return {std::move(x), SolveReport{iterations, res, SolveMethod::pcg}};
        }
    }
    return solve_row_cholesky(K, dense, i, iterations);
}

} // namespace mmica
