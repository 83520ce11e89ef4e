#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mmica {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Symmetric p x p matrix stored as its lower triangle, row-major:
/// entry (k, l) with k >= l lives at k (k + 1) / 2 + l.
class PackedSym {
public:
    PackedSym() = default;
    explicit PackedSym(Index dim) : dim_(dim), data_(packed_size(dim), 0.0) {}

    static std::size_t packed_size(Index dim) { return static_cast<std::size_t>(dim * (dim + 1) / 2); }
    static PackedSym identity(Index dim);
    // Reads the lower triangle of `dense`; the upper triangle is ignored.
    static PackedSym from_dense(const Matrix& dense);

    Index dim() const { return dim_; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double operator()(Index k, Index l) const { return data_[offset(k, l)]; }
    double& operator()(Index k, Index l) { return data_[offset(k, l)]; }

    Matrix to_dense() const;
    Vector diagonal() const;

    void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }
    void scale(double factor);

private:
    static std::size_t offset(Index k, Index l) {
        if (k < l) std::swap(k, l);
        return static_cast<std::size_t>(k * (k + 1) / 2 + l);
    }

    Index dim_ = 0;
    std::vector<double> data_;
};

// A <- A + w x x^T. p (p + 1) / 2 multiply-adds.
void sym_rank1_update(PackedSym& A, std::span<const double> x, double w);
inline void sym_rank1_update(PackedSym& A, const Vector& x, double w) {
    sym_rank1_update(A, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), w);
}

// K = W A W^T.
PackedSym congruent(const Matrix& W, const PackedSym& A);

enum class SolveMethod { cholesky, pcg };

struct SolveReport {
    int iterations = 0;
    double relative_residual = 0.0;
    SolveMethod method = SolveMethod::pcg;
};

struct SolverOptions {
    double tol = 1e-10;
    int max_iter = 0; // 0 selects 2p
};

// Lower-triangular Cholesky factor of an SPD matrix, packed; nullopt on a
// non-positive pivot.
std::optional<PackedSym> cholesky_factor(const PackedSym& K);
Vector cholesky_solve(const PackedSym& L, const Vector& b);

struct RowSolve {
    Vector z;
    SolveReport report;
};

/// Solves K z = e_i (i zero-based) by conjugate gradient preconditioned with
/// diag(K). Falls back to a packed Cholesky solve when PCG breaks down or
/// misses `tol` within `max_iter` steps; throws NotPositiveDefinite if the
/// fallback hits a non-positive pivot too.
RowSolve solve_row(const PackedSym& K, Index i, const SolverOptions& opts = {});

} // namespace mmica
