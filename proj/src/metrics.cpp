#include "mmica/metrics.hpp"

#include "mmica/errors.hpp"

namespace mmica {

double amari_distance(const Matrix& W, const Matrix& A) {
    if (W.rows() != W.cols() || A.rows() != A.cols() || W.cols() != A.rows()) {
        throw DimensionMismatch("amari_distance: W and A must be square of the same size");
    }
    const Matrix R2 = (W * A).array().square();
    const Vector row_max = R2.rowwise().maxCoeff();
    const Eigen::RowVectorXd col_max = R2.colwise().maxCoeff();
    if (!(row_max.array() > 0.0).all() || !(col_max.array() > 0.0).all()) {
        throw DegenerateRow("amari_distance: W A has an all-zero row or column");
    }
    const auto p = static_cast<double>(W.rows());
    const double rows = (R2.array().colwise() / row_max.array()).sum() - p;
    const double cols = (R2.array().rowwise() / col_max.array()).sum() - p;
    return rows + cols;
}

double leftout_loss(const Matrix& W, const Matrix& X_test, const DensityModel& model) {
    if (X_test.cols() == 0) throw InvalidConfig("leftout_loss: empty test set");
    return empirical_loss(W, X_test, model);
}

double grad_norm(const Matrix& W, const Matrix& X, const DensityModel& model, bool include_identity) {
    return relative_gradient(W, X, model, include_identity).norm();
}

} // namespace mmica
