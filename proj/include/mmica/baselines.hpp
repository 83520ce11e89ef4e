#pragma once

#include <cstdint>
#include <vector>

#include "mmica/mm_engine.hpp"

namespace mmica {

enum class StepSchedule { constant, inv_sqrt };

struct SGDConfig {
    // Constant step, or lambda in lambda * n^-0.5 (n = samples seen) for inv_sqrt.
    double step = 0.1;
    StepSchedule schedule = StepSchedule::constant;
    Index batch_size = 1000;
    // Keep the -I term contributed by -log|det W|.
    bool gradient_identity = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Relative gradient G'(Y) Y^T / n_b - I with Y = W X_batch. Without the
/// identity term this is the plain second-moment matrix of (G'(Y), Y).
Matrix relative_gradient(const Matrix& W, const Matrix& X_batch, const DensityModel& model,
                         bool include_identity = true);

// Finite-sum SGD over the fixed block partition, block order reshuffled per epoch.
RunOutcome sgd_run(const Matrix& X, const Matrix& W0, const DensityModel& model, const SGDConfig& cfg, Index epochs,
                   const Callbacks& callbacks = {});

// Streaming SGD; each sample is used once.
RunOutcome sgd_run_online(SampleStream& stream, const Matrix& W0, const DensityModel& model, const SGDConfig& cfg,
                          std::int64_t max_samples, Index batches_per_epoch = 0, const Callbacks& callbacks = {});

struct SagState {
    std::vector<Matrix> stored;
    Matrix average;

    SagState(std::size_t blocks, Index p);
    // Replaces block b's gradient and patches the running mean.
    void replace(std::size_t b, const Matrix& gradient);
};

RunOutcome sag_run(const Matrix& X, const Matrix& W0, const DensityModel& model, const SGDConfig& cfg, Index epochs,
                   const Callbacks& callbacks = {}, const std::function<void(const SagState&)>& on_state = {});

// Full-batch MM: U <- u*(W X) on every sample, rebuild A^i, sweep the rows.
RunOutcome full_batch_mm_run(const Matrix& X, const Matrix& W0, const DensityModel& model, Index epochs,
                             const SolverOptions& solver = {}, const Callbacks& callbacks = {});

/// One EM update of the mixing matrix for x = A s + n, n ~ N(0, Sigma), with
/// source variances diag(Lambda). For Sigma == 0 the posterior moments reduce
/// to E[s|x] = A^-1 x and E[s s^T|x] = A^-1 x x^T A^-T, and the update returns A.
Matrix noisy_em_update(const Matrix& A, const Vector& lambda, const Matrix& Sigma, const Matrix& X);

} // namespace mmica
