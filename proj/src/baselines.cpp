#include "mmica/baselines.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mmica/errors.hpp"

namespace mmica {

void SGDConfig::validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw InvalidConfig("step size must be positive");
    if (batch_size < 1) throw InvalidConfig("batch size must be positive");
}

Matrix relative_gradient(const Matrix& W, const Matrix& X_batch, const DensityModel& model, bool include_identity) {
    if (X_batch.cols() == 0) throw InvalidConfig("relative_gradient: empty batch");
    if (W.cols() != X_batch.rows()) throw DimensionMismatch("relative_gradient: shapes disagree");
    const Matrix Y = W * X_batch;
    const Matrix psi = Y.unaryExpr([&](double y) { return eval_dG(model, y); });
    Matrix grad = psi * Y.transpose() / static_cast<double>(X_batch.cols());
    if (include_identity) grad -= Matrix::Identity(W.rows(), W.rows());
    return grad;
}

namespace {

// Aborts a run whose loss turns non-finite or climbs 1e3 above its first value.
class DivergenceGuard {
public:
    explicit DivergenceGuard(std::string algo) : algo_(std::move(algo)) {}

    void check_loss(double loss) {
        if (!std::isfinite(loss)) throw Diverged(algo_ + ": loss became non-finite");
        if (std::isnan(initial_)) {
            initial_ = loss;
        } else if (loss - initial_ > 1e3) {
            throw Diverged(algo_ + ": loss exceeded its initial value by more than 1e3");
        }
    }

    void check_iterate(const Matrix& W) const {
        if (!W.allFinite()) throw Diverged(algo_ + ": iterate became non-finite");
    }

private:
    std::string algo_;
    double initial_ = std::numeric_limits<double>::quiet_NaN();
};

double batch_loss(const Matrix& W, const Matrix& Y, const DensityModel& model) {
    double logdet;
    try {
        logdet = log_abs_det(W);
    } catch (const SingularMatrix&) {
        return std::numeric_limits<double>::infinity();
    }
    const double total = Y.unaryExpr([&](double y) { return eval_G(model, y); }).sum();
    return -logdet + total / static_cast<double>(Y.cols());
}

// W <- (I - step * grad) W, checking the batch loss at the current iterate first.
void relative_step(Matrix& W, const Matrix& X_batch, const DensityModel& model, double step, bool with_identity,
                   DivergenceGuard& guard, const Matrix* direction = nullptr) {
    const Matrix Y = W * X_batch;
    guard.check_loss(batch_loss(W, Y, model));
    Matrix grad;
    if (direction == nullptr) {
        const Matrix psi = Y.unaryExpr([&](double y) { return eval_dG(model, y); });
        grad = psi * Y.transpose() / static_cast<double>(X_batch.cols());
        if (with_identity) grad -= Matrix::Identity(W.rows(), W.rows());
        direction = &grad;
    }
    W = (Matrix::Identity(W.rows(), W.rows()) - step * *direction) * W;
    guard.check_iterate(W);
}

} // namespace

RunOutcome sgd_run(const Matrix& X, const Matrix& W0, const DensityModel& model, const SGDConfig& cfg, Index epochs,
                   const Callbacks& callbacks) {
    cfg.validate();
    const Index n = X.cols();
    RunOutcome out;
    out.W = W0;
    DivergenceGuard guard("sgd");
    Rng block_rng = Rng(cfg.seed).split(streams::blocks);
    const auto blocks = make_blocks(n, cfg.batch_size);
    std::vector<std::size_t> order(blocks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    if (callbacks.on_epoch) callbacks.on_epoch({0, out.W, nullptr, nullptr});
    for (Index epoch = 1; epoch <= epochs; ++epoch) {
        block_rng.shuffle(order);
        for (const std::size_t b : order) {
            const Matrix Xb = X(Eigen::all, blocks[b]);
            out.samples += Xb.cols();
            const double step = cfg.schedule == StepSchedule::constant
                                    ? cfg.step
                                    : cfg.step / std::sqrt(static_cast<double>(out.samples));
            relative_step(out.W, Xb, model, step, cfg.gradient_identity, guard);
        }
        out.epochs = epoch;
        if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, nullptr, nullptr});
    }
    return out;
}

RunOutcome sgd_run_online(SampleStream& stream, const Matrix& W0, const DensityModel& model, const SGDConfig& cfg,
                          std::int64_t max_samples, Index batches_per_epoch, const Callbacks& callbacks) {
    cfg.validate();
    const Index p = stream.dim();
    RunOutcome out;
    out.W = W0;
    DivergenceGuard guard("sgd");
    if (callbacks.on_epoch) callbacks.on_epoch({0, out.W, nullptr, nullptr});
    Matrix batch(p, cfg.batch_size);
    Index batches = 0;
    Index epoch = 0;
    bool emitted_last = true;
    while (out.samples < max_samples) {
        const auto want = static_cast<Index>(std::min<std::int64_t>(cfg.batch_size, max_samples - out.samples));
        batch.resize(p, want);
        const Index got = stream.fetch(batch);
        if (got == 0) break;
        out.samples += got;
        const double step = cfg.schedule == StepSchedule::constant
                                ? cfg.step
                                : cfg.step / std::sqrt(static_cast<double>(out.samples));
        relative_step(out.W, batch.leftCols(got), model, step, cfg.gradient_identity, guard);
        ++batches;
        emitted_last = false;
        if (batches_per_epoch > 0 && batches % batches_per_epoch == 0) {
            ++epoch;
            if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, nullptr, nullptr});
            emitted_last = true;
        }
        if (got < want) break;
    }
    if (!emitted_last) {
        ++epoch;
        if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, nullptr, nullptr});
    }
    out.epochs = epoch;
    return out;
}

SagState::SagState(std::size_t blocks, Index p)
    : stored(blocks, Matrix::Zero(p, p)), average(Matrix::Zero(p, p)) {}

void SagState::replace(std::size_t b, const Matrix& gradient) {
    average += (gradient - stored[b]) / static_cast<double>(stored.size());
    stored[b] = gradient;
}

RunOutcome sag_run(const Matrix& X, const Matrix& W0, const DensityModel& model, const SGDConfig& cfg, Index epochs,
                   const Callbacks& callbacks, const std::function<void(const SagState&)>& on_state) {
    cfg.validate();
    const Index p = X.rows();
    RunOutcome out;
    out.W = W0;
    DivergenceGuard guard("sag");
    Rng block_rng = Rng(cfg.seed).split(streams::blocks);
    const auto blocks = make_blocks(X.cols(), cfg.batch_size);
    std::vector<std::size_t> order(blocks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SagState state(blocks.size(), p);

    if (callbacks.on_epoch) callbacks.on_epoch({0, out.W, nullptr, nullptr});
    for (Index epoch = 1; epoch <= epochs; ++epoch) {
        block_rng.shuffle(order);
        for (const std::size_t b : order) {
            const Matrix Xb = X(Eigen::all, blocks[b]);
            state.replace(b, relative_gradient(out.W, Xb, model, cfg.gradient_identity));
            relative_step(out.W, Xb, model, cfg.step, cfg.gradient_identity, guard, &state.average);
            if (on_state) on_state(state);
            out.samples += Xb.cols();
        }
        out.epochs = epoch;
        if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, nullptr, nullptr});
    }
    return out;
}

RunOutcome full_batch_mm_run(const Matrix& X, const Matrix& W0, const DensityModel& model, Index epochs,
                             const SolverOptions& solver, const Callbacks& callbacks) {
    const Index p = X.rows();
    const Index n = X.cols();
    RunOutcome out;
    out.W = W0;
    UMemory mem{Matrix(p, n), Matrix(p, n)};
    auto majorize = [&] {
        const Matrix Y = out.W * X;
        for (Index j = 0; j < n; ++j) {
            for (Index i = 0; i < p; ++i) {
                const UstarPair uf = eval_f_at_ustar(model, Y(i, j));
                mem.u(i, j) = uf.u;
                mem.fu(i, j) = uf.fu;
            }
        }
        return stats_from_weights(mem.u, X);
    };
    SufficientStats stats = majorize();
    if (callbacks.on_epoch) callbacks.on_epoch({0, out.W, &stats, &mem});
    for (Index epoch = 1; epoch <= epochs; ++epoch) {
        if (epoch > 1) stats = majorize();
        if (callbacks.on_step) callbacks.on_step({Phase::majorization, epoch, 0, out.W, stats, &mem});
        const SweepReport sweep = minimization_sweep(out.W, stats, solver);
        if (static_cast<Index>(sweep.skipped.size()) == p) {
            throw DegenerateStats("full_batch_mm_run: every row was skipped");
        }
        out.skipped_rows += static_cast<std::int64_t>(sweep.skipped.size());
        out.cholesky_fallbacks += sweep.cholesky_fallbacks;
        if (callbacks.on_step) callbacks.on_step({Phase::minimization, epoch, 0, out.W, stats, &mem});
        out.samples += n;
        out.epochs = epoch;
        if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, &stats, &mem});
    }
    return out;
}

Matrix noisy_em_update(const Matrix& A, const Vector& lambda, const Matrix& Sigma, const Matrix& X) {
    const Index p = A.rows();
    if (A.cols() != p || Sigma.rows() != p || Sigma.cols() != p || lambda.size() != p || X.rows() != p) {
        throw DimensionMismatch("noisy_em_update: shapes disagree");
    }
    const auto n = static_cast<double>(X.cols());
    Matrix cross;  // sum_j x_j E[s|x_j]^T
    Matrix second; // sum_j E[s s^T|x_j]
    if (Sigma.isZero(0.0)) {
        const Eigen::PartialPivLU<Matrix> lu(A);
        log_abs_det(A); // throws SingularMatrix
        const Matrix S = lu.solve(X);
        cross = X * S.transpose();
        second = S * S.transpose();
    } else {
        if (!(lambda.array() > 0.0).all()) throw DomainError("noisy_em_update: source variances must be positive");
        log_abs_det(Sigma);
        const Eigen::PartialPivLU<Matrix> sigma_lu(Sigma);
        const Matrix SiA = sigma_lu.solve(A); // Sigma^-1 A
        const Matrix precision = A.transpose() * SiA + Matrix(lambda.cwiseInverse().asDiagonal());
        log_abs_det(precision);
        const Matrix P = precision.inverse();
        const Matrix M = P * SiA.transpose() * X; // posterior means, p x n
        cross = X * M.transpose();
        second = n * P + M * M.transpose();
    }
    log_abs_det(second);
    // A_new = cross * second^-1, with `second` symmetric.
    return second.partialPivLu().solve(cross.transpose()).transpose();
}

} // namespace mmica
