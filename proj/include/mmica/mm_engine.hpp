#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmica/datakit.hpp"
#include "mmica/density.hpp"
#include "mmica/rng.hpp"
#include "mmica/symlin.hpp"

namespace mmica {

/// The p weighted covariances A^i = (1/n) sum_j U_ij x_j x_j^T, packed.
struct SufficientStats {
    std::vector<PackedSym> A;
    std::int64_t samples_seen = 0;
    // Rank-one updates received by each A^i (drives the online step size).
    std::vector<std::int64_t> updates;

    static SufficientStats zeros(Index p);
    Index dim() const { return static_cast<Index>(A.size()); }
};

/// Stored weights U^mem and their conjugate values f(U^mem) (incremental only).
struct UMemory {
    Matrix u;
    Matrix fu;
};

enum class Selection { greedy, random, full };
enum class InitKind { whiten, identity };

Selection parse_selection(std::string_view name);
std::string to_string(Selection s);
InitKind parse_init(std::string_view name);
std::string to_string(InitKind k);

struct MMConfig {
    Index batch_size = 1000;
    Index q = 2;
    double alpha = 0.5;
    Selection selection = Selection::greedy;
    SolverOptions solver;
    std::uint64_t seed = 0;
    InitKind init = InitKind::whiten;
    Index whiten_subsample = 10000;
    // Overrides `init` when set.
    std::optional<Matrix> w_init;
    // Start from U^mem = 0, A^i = 0 as in the original pseudo-code; f(0) is
    // taken as 0 and unvisited entries get an infinite gap.
    bool zero_init_memory = false;
    // Online step size from the global sample count instead of per-matrix counts.
    bool global_counter = false;

    void validate(Index p) const;
};

// log |det W|; SingularMatrix when W is singular.
double log_abs_det(const Matrix& W);

// -log|det W| + (1/n) sum_ij [U_ij (WX)_ij^2 / 2 + fU_ij].
double surrogate_loss(const Matrix& W, const Matrix& U, const Matrix& fU, const Matrix& X);

// -log|det W| + (1/n) sum_ij G((WX)_ij).
double empirical_loss(const Matrix& W, const Matrix& X, const DensityModel& model);

// Surrogate decrease from refreshing one memory entry: u y^2 / 2 + f(u) - G(y).
double compute_gap(const DensityModel& model, double u_mem, double fu_mem, double y);

// Indices of the sources to refresh for one sample. Greedy breaks ties by
// lowest index; random draws a uniform q-subset; full returns 0..p-1.
std::vector<Index> select_sources(std::span<const double> gaps, Index q, Selection selection, Rng& rng);

struct IncrementalState {
    SufficientStats stats;
    UMemory mem;
};

/// Memory and statistics at W0: U^mem = u*(W0 X) with matching A^i, or all
/// zeros when `zero_init` is set.
IncrementalState init_incremental_state(const Matrix& W, const Matrix& X, const DensityModel& model,
                                        bool zero_init = false);

// A^i = (1/n) sum_j U_ij x_j x_j^T recomputed from scratch.
SufficientStats stats_from_weights(const Matrix& U, const Matrix& X);

struct MajorizationReport {
    // Sum of the refreshed gaps divided by n: the exact surrogate decrease.
    double surrogate_decrease = 0.0;
    std::size_t refreshed = 0;
};

/// Refreshes q memory entries per sample of `batch` and patches the A^i with
/// (1/n)(u_new - u_mem) x x^T. Unselected entries are left untouched.
MajorizationReport majorize_incremental(SufficientStats& stats, UMemory& mem, const Matrix& W, const Matrix& X,
                                        std::span<const Index> batch, const DensityModel& model, Index q,
                                        Selection selection, Rng& rng);

/// Stochastic-approximation update for one streamed sample: q random sources
/// get A^i <- (1 - rho) A^i + rho u_i x x^T with rho = n^-alpha, n being the
/// update count of A^i (or the global sample count).
void majorize_online(SufficientStats& stats, const Matrix& W, const Vector& x, const DensityModel& model, Index q,
                     double alpha, Rng& rng, bool global_counter = false);

/// Exact minimization of the surrogate over row i: W_i <- m W with
/// m = (K^-1)_{i:} / sqrt((K^-1)_ii), K = W A_i W^T. DegenerateStats if K is
/// not positive definite.
SolveReport minimize_row(Matrix& W, const PackedSym& A_i, Index i, const SolverOptions& opts = {});

struct SweepReport {
    std::vector<Index> skipped;
    int cholesky_fallbacks = 0;
};

// minimize_row for i = 0..p-1 in order. Rows whose A^i has fewer than
// `min_updates` updates, or whose K does not factor, are skipped.
SweepReport minimization_sweep(Matrix& W, const SufficientStats& stats, const SolverOptions& opts = {},
                               std::int64_t min_updates = 0);

// Orchestration ------------------------------------------------------------

enum class Phase { majorization, minimization };

struct StepEvent {
    Phase phase;
    Index epoch;
    Index batch;
    const Matrix& W;
    const SufficientStats& stats;
    const UMemory* mem;
};

struct EpochEvent {
    Index epoch;
    const Matrix& W;
    const SufficientStats* stats;
    const UMemory* mem;
};

/// Observers must not modify engine state. on_epoch fires once after
/// initialization (epoch 0) and after every epoch; on_step after every
/// majorization and minimization half-step.
struct Callbacks {
    std::function<void(const EpochEvent&)> on_epoch;
    std::function<void(const StepEvent&)> on_step;
};

struct RunOutcome {
    Matrix W;
    Index epochs = 0;
    std::int64_t samples = 0;
    std::int64_t skipped_rows = 0;
    std::int64_t cholesky_fallbacks = 0;
};

// Fixed consecutive blocks of `batch_size` columns covering [0, n).
std::vector<std::vector<Index>> make_blocks(Index n, Index batch_size);

// W0 from cfg: explicit w_init, identity, or whitening on a subsample.
Matrix initial_unmixing(const Matrix& X, const MMConfig& cfg, SubsampleMode mode);

/// Incremental MM: alternate majorize_incremental over one block and a
/// minimization sweep; block order is reshuffled every epoch.
RunOutcome run_incremental(const Matrix& X, const DensityModel& model, const MMConfig& cfg, Index epochs,
                           const Callbacks& callbacks = {});

/// Online MM over `max_samples` streamed samples (each used once). An epoch
/// event is emitted every `batches_per_epoch` batches and after the last one.
/// With whitening init the first `whiten_subsample` samples are fetched up
/// front for the covariance and then fed to the updates like any other.
RunOutcome run_online(SampleStream& stream, const DensityModel& model, const MMConfig& cfg, std::int64_t max_samples,
                      Index batches_per_epoch = 0, const Callbacks& callbacks = {});

} // namespace mmica
