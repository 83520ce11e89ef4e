#pragma once

#include <cmath>
#include <limits>

#include "mmica/baselines.hpp"

namespace mmica {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One row of a run trace. Metrics that do not apply are NaN.
struct MetricRecord {
    Index epoch = 0;
    double wall_time_s = 0.0;
    double train_loss = kNaN;
    double surrogate_loss = kNaN;
    double test_loss = kNaN;
    double grad_norm = kNaN;
    double amari = kNaN;
};

/// Amari distance of R = W A:
///   sum_i (sum_j R_ij^2 / max_l R_il^2 - 1) + sum_j (sum_i R_ij^2 / max_l R_lj^2 - 1).
/// Zero exactly when R is a scaled permutation. DegenerateRow if a row or
/// column of R vanishes.
double amari_distance(const Matrix& W, const Matrix& A);

// Empirical loss on held-out samples.
double leftout_loss(const Matrix& W, const Matrix& X_test, const DensityModel& model);

// Frobenius norm of the full-batch relative gradient.
double grad_norm(const Matrix& W, const Matrix& X, const DensityModel& model, bool include_identity = true);

} // namespace mmica
