#include "mmica/mm_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmica/errors.hpp"

namespace mmica {

SufficientStats SufficientStats::zeros(Index p) {
    SufficientStats s;
    s.A.assign(static_cast<std::size_t>(p), PackedSym(p));
    s.updates.assign(static_cast<std::size_t>(p), 0);
    return s;
}

Selection parse_selection(std::string_view name) {
    if (name == "greedy") return Selection::greedy;
    if (name == "random") return Selection::random;
    if (name == "full") return Selection::full;
    throw InvalidConfig("unknown selection '" + std::string(name) + "' (expected greedy|random|full)");
}

std::string to_string(Selection s) {
    switch (s) {
    case Selection::greedy: return "greedy";
    case Selection::random: return "random";
    case Selection::full: return "full";
    }
    return "?";
}

InitKind parse_init(std::string_view name) {
    if (name == "whiten") return InitKind::whiten;
    if (name == "identity") return InitKind::identity;
    throw InvalidConfig("unknown init '" + std::string(name) + "' (expected whiten|identity)");
}

std::string to_string(InitKind k) { return k == InitKind::whiten ? "whiten" : "identity"; }

void MMConfig::validate(Index p) const {
    if (batch_size < 1) throw InvalidConfig("batch size must be positive");
    if (q < 1 || q > p) throw InvalidConfig("q must lie in [1, p]");
    if (!(alpha >= 0.5 && alpha < 1.0)) throw InvalidConfig("alpha must lie in [0.5, 1)");
    if (!(solver.tol > 0.0)) throw InvalidConfig("solver tolerance must be positive");
    if (w_init && (w_init->rows() != p || w_init->cols() != p)) {
        throw InvalidConfig("initial unmixing matrix must be p x p");
    }
}

double log_abs_det(const Matrix& W) {
    if (W.rows() != W.cols()) throw DimensionMismatch("log_abs_det: matrix is not square");
    const Eigen::PartialPivLU<Matrix> lu(W);
    double acc = 0.0;
    for (Index k = 0; k < W.rows(); ++k) {
        const double d = std::abs(lu.matrixLU()(k, k));
        if (!(d > 0.0) || !std::isfinite(d)) throw SingularMatrix("unmixing matrix is singular");
        acc += std::log(d);
    }
    return acc;
}

double surrogate_loss(const Matrix& W, const Matrix& U, const Matrix& fU, const Matrix& X) {
    if (W.cols() != X.rows() || U.rows() != W.rows() || U.cols() != X.cols() || fU.rows() != U.rows() ||
        fU.cols() != U.cols()) {
        throw DimensionMismatch("surrogate_loss: shapes disagree");
    }
    const Matrix Y = W * X;
    const double quad = 0.5 * (U.array() * Y.array().square()).sum();
    return -log_abs_det(W) + (quad + fU.sum()) / static_cast<double>(X.cols());
}

double empirical_loss(const Matrix& W, const Matrix& X, const DensityModel& model) {
    if (W.cols() != X.rows()) throw DimensionMismatch("empirical_loss: shapes disagree");
    const Matrix Y = W * X;
    const double total = Y.unaryExpr([&](double y) { return eval_G(model, y); }).sum();
    return -log_abs_det(W) + total / static_cast<double>(X.cols());
}

double compute_gap(const DensityModel& model, double u_mem, double fu_mem, double y) {
    return 0.5 * u_mem * y * y + fu_mem - eval_G(model, y);
}

std::vector<Index> select_sources(std::span<const double> gaps, Index q, Selection selection, Rng& rng) {
    const auto p = static_cast<Index>(gaps.size());
    std::vector<Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (selection == Selection::full || q >= p) return idx;
    const auto take = static_cast<std::size_t>(q);
    if (selection == Selection::greedy) {
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                          [&](Index a, Index b) {
                              const double ga = gaps[static_cast<std::size_t>(a)];
                              const double gb = gaps[static_cast<std::size_t>(b)];
                              return ga > gb || (ga == gb && a < b);
                          });
    } else {
        for (std::size_t k = 0; k < take; ++k) {
            const auto pick = k + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(idx.size() - k)));
            std::swap(idx[k], idx[pick]);
        }
    }
    idx.resize(take);
    return idx;
}

SufficientStats stats_from_weights(const Matrix& U, const Matrix& X) {
    if (U.rows() != X.rows() || U.cols() != X.cols()) throw DimensionMismatch("stats_from_weights: shapes disagree");
    const Index p = X.rows();
    const auto n = static_cast<double>(X.cols());
    SufficientStats stats = SufficientStats::zeros(p);
    for (Index i = 0; i < p; ++i) {
        const Matrix weighted = X * U.row(i).asDiagonal();
        stats.A[static_cast<std::size_t>(i)] = PackedSym::from_dense(weighted * X.transpose() / n);
        stats.updates[static_cast<std::size_t>(i)] = X.cols();
    }
    stats.samples_seen = X.cols();
    return stats;
}

IncrementalState init_incremental_state(const Matrix& W, const Matrix& X, const DensityModel& model,
                                        bool zero_init) {
    const Index p = X.rows();
    const Index n = X.cols();
    IncrementalState state;
    if (zero_init) {
        state.stats = SufficientStats::zeros(p);
        state.mem.u = Matrix::Zero(p, n);
        state.mem.fu = Matrix::Zero(p, n);
        return state;
    }
    const Matrix Y = W * X;
    state.mem.u.resize(p, n);
    state.mem.fu.resize(p, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < p; ++i) {
            const UstarPair uf = eval_f_at_ustar(model, Y(i, j));
            state.mem.u(i, j) = uf.u;
            state.mem.fu(i, j) = uf.fu;
        }
    }
    state.stats = stats_from_weights(state.mem.u, X);
    return state;
}

MajorizationReport majorize_incremental(SufficientStats& stats, UMemory& mem, const Matrix& W, const Matrix& X,
                                        std::span<const Index> batch, const DensityModel& model, Index q,
                                        Selection selection, Rng& rng) {
    const Index p = X.rows();
    const Index n = X.cols();
    if (stats.dim() != p || W.rows() != p || W.cols() != p || mem.u.rows() != p || mem.u.cols() != n) {
        throw DimensionMismatch("majorize_incremental: shapes disagree");
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    MajorizationReport report;
    Vector y(p);
    std::vector<double> gaps(static_cast<std::size_t>(p));
    std::vector<UstarPair> fresh(static_cast<std::size_t>(p));
    for (const Index j : batch) {
        if (j < 0 || j >= n) throw DimensionMismatch("majorize_incremental: sample index out of range");
        const auto x = X.col(j);
        y.noalias() = W * x;
        for (Index i = 0; i < p; ++i) {
            const auto k = static_cast<std::size_t>(i);
            fresh[k] = eval_f_at_ustar(model, y(i));
            const double u_mem = mem.u(i, j);
            // u_mem == 0 only for never-visited entries of a zero-initialized memory.
            gaps[k] = u_mem == 0.0 ? std::numeric_limits<double>::infinity()
                                   : compute_gap(model, u_mem, mem.fu(i, j), y(i));
        }
        for (const Index i : select_sources(gaps, q, selection, rng)) {
            const auto k = static_cast<std::size_t>(i);
            const double delta = fresh[k].u - mem.u(i, j);
            if (delta != 0.0) {
                sym_rank1_update(stats.A[k], std::span<const double>(x.data(), static_cast<std::size_t>(p)),
                                 delta * inv_n);
            }
            if (std::isfinite(gaps[k])) report.surrogate_decrease += gaps[k] * inv_n;
            mem.u(i, j) = fresh[k].u;
            mem.fu(i, j) = fresh[k].fu;
            ++stats.updates[k];
            ++report.refreshed;
        }
        ++stats.samples_seen;
    }
    return report;
}

void majorize_online(SufficientStats& stats, const Matrix& W, const Vector& x, const DensityModel& model, Index q,
                     double alpha, Rng& rng, bool global_counter) {
    const Index p = stats.dim();
    if (x.size() != p || W.rows() != p || W.cols() != p) throw DimensionMismatch("majorize_online: shapes disagree");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidConfig("majorize_online: alpha must lie in (0, 1]");
    ++stats.samples_seen;
    const Vector y = W * x;
    // The online rule ignores gaps; the selection is uniformly random.
    const std::vector<double> no_gaps(static_cast<std::size_t>(p), 0.0);
    for (const Index i : select_sources(no_gaps, q, Selection::random, rng)) {
        const auto k = static_cast<std::size_t>(i);
        const std::int64_t count = global_counter ? stats.samples_seen : ++stats.updates[k];
        if (global_counter) ++stats.updates[k];
        const double rho = std::pow(static_cast<double>(count), -alpha);
        stats.A[k].scale(1.0 - rho);
        sym_rank1_update(stats.A[k], x, rho * eval_ustar(model, y(i)));
    }
}

SolveReport minimize_row(Matrix& W, const PackedSym& A_i, Index i, const SolverOptions& opts) {
    const Index p = W.rows();
    if (W.cols() != p || A_i.dim() != p || i < 0 || i >= p) {
        throw DimensionMismatch("minimize_row: shapes disagree");
    }
    const PackedSym K = congruent(W, A_i);
    RowSolve solved;
    try {
        solved = solve_row(K, i, opts);
    } catch (const NotPositiveDefinite& e) {
        throw DegenerateStats(std::string("minimize_row: ") + e.what());
    }
    const double zi = solved.z(i);
    if (!(zi > 0.0) || !solved.z.allFinite()) {
        throw DegenerateStats("minimize_row: (K^-1)_ii is not positive for row " + std::to_string(i));
    }
    const Vector m = solved.z / std::sqrt(zi);
    const Eigen::RowVectorXd row = m.transpose() * W;
    W.row(i) = row;
    return solved.report;
}

SweepReport minimization_sweep(Matrix& W, const SufficientStats& stats, const SolverOptions& opts,
                               std::int64_t min_updates) {
    SweepReport report;
    for (Index i = 0; i < W.rows(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (stats.updates[k] < min_updates) {
            report.skipped.push_back(i);
            continue;
        }
        try {
            const SolveReport r = minimize_row(W, stats.A[k], i, opts);
            if (r.method == SolveMethod::cholesky) ++report.cholesky_fallbacks;
        } catch (const DegenerateStats&) {
            report.skipped.push_back(i);
        }
    }
    return report;
}

std::vector<std::vector<Index>> make_blocks(Index n, Index batch_size) {
    std::vector<std::vector<Index>> blocks;
    for (Index start = 0; start < n; start += batch_size) {
        std::vector<Index> block(static_cast<std::size_t>(std::min(batch_size, n - start)));
        std::iota(block.begin(), block.end(), start);
        blocks.push_back(std::move(block));
    }
    return blocks;
}

Matrix initial_unmixing(const Matrix& X, const MMConfig& cfg, SubsampleMode mode) {
    if (cfg.w_init) return *cfg.w_init;
    if (cfg.init == InitKind::identity) return Matrix::Identity(X.rows(), X.rows());
    return whiten_init(X, std::max(cfg.whiten_subsample, X.rows()), mode, cfg.seed).W0;
}

RunOutcome run_incremental(const Matrix& X, const DensityModel& model, const MMConfig& cfg, Index epochs,
                           const Callbacks& callbacks) {
    const Index p = X.rows();
    const Index n = X.cols();
    cfg.validate(p);
    if (n < cfg.batch_size) throw InvalidConfig("run_incremental: need at least batch_size samples");
    if (!X.allFinite()) throw InvalidConfig("run_incremental: data contains non-finite values");

    RunOutcome out;
    out.W = initial_unmixing(X, cfg, SubsampleMode::random);
    IncrementalState state = init_incremental_state(out.W, X, model, cfg.zero_init_memory);

    const Rng root(cfg.seed);
    Rng block_rng = root.split(streams::blocks);
    Rng select_rng = root.split(streams::selection);
    const auto blocks = make_blocks(n, cfg.batch_size);
    std::vector<std::size_t> order(blocks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const Index q = cfg.selection == Selection::full ? p : cfg.q;

    if (callbacks.on_epoch) callbacks.on_epoch({0, out.W, &state.stats, &state.mem});
    for (Index epoch = 1; epoch <= epochs; ++epoch) {
        block_rng.shuffle(order);
        bool progressed = false;
        Index batch_no = 0;
        for (const std::size_t b : order) {
            majorize_incremental(state.stats, state.mem, out.W, X, blocks[b], model, q, cfg.selection, select_rng);
            if (callbacks.on_step) {
                callbacks.on_step({Phase::majorization, epoch, batch_no, out.W, state.stats, &state.mem});
            }
            const SweepReport sweep = minimization_sweep(out.W, state.stats, cfg.solver);
            out.skipped_rows += static_cast<std::int64_t>(sweep.skipped.size());
            out.cholesky_fallbacks += sweep.cholesky_fallbacks;
            progressed = progressed || static_cast<Index>(sweep.skipped.size()) < p;
            if (callbacks.on_step) {
                callbacks.on_step({Phase::minimization, epoch, batch_no, out.W, state.stats, &state.mem});
            }
            out.samples += static_cast<std::int64_t>(blocks[b].size());
            ++batch_no;
        }
        if (!progressed) throw DegenerateStats("run_incremental: every row was skipped for a whole epoch");
        out.epochs = epoch;
        if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, &state.stats, &state.mem});
    }
    return out;
}

RunOutcome run_online(SampleStream& stream, const DensityModel& model, const MMConfig& cfg, std::int64_t max_samples,
                      Index batches_per_epoch, const Callbacks& callbacks) {
    const Index p = stream.dim();
    cfg.validate(p);
    if (max_samples < cfg.batch_size) throw InvalidConfig("run_online: max_samples must be at least batch_size");

    RunOutcome out;
    Matrix prefix(p, 0);
    Index prefix_used = 0;
    if (cfg.w_init) {
        out.W = *cfg.w_init;
    } else if (cfg.init == InitKind::identity) {
        out.W = Matrix::Identity(p, p);
    } else {
        prefix.resize(p, std::min<std::int64_t>(std::max(cfg.whiten_subsample, p), max_samples));
        prefix.conservativeResize(p, stream.fetch(prefix));
        out.W = whiten_init(prefix, std::max(prefix.cols(), p), SubsampleMode::first).W0;
    }

    SufficientStats stats = SufficientStats::zeros(p);
    Rng select_rng = Rng(cfg.seed).split(streams::selection);
    const Index q = cfg.selection == Selection::full ? p : cfg.q;

    if (callbacks.on_epoch) callbacks.on_epoch({0, out.W, &stats, nullptr});
    Matrix batch(p, cfg.batch_size);
    Index batches = 0;
    Index epoch = 0;
    bool emitted_last = true;
    while (out.samples < max_samples) {
        const auto want = static_cast<Index>(std::min<std::int64_t>(cfg.batch_size, max_samples - out.samples));
        Index got = std::min(want, prefix.cols() - prefix_used);
        batch.leftCols(got) = prefix.middleCols(prefix_used, got);
        prefix_used += got;
        if (got < want) {
            Matrix rest(p, want - got);
            const Index more = stream.fetch(rest);
            batch.middleCols(got, more) = rest.leftCols(more);
            got += more;
        }
        if (got == 0) break;

        for (Index k = 0; k < got; ++k) {
            majorize_online(stats, out.W, batch.col(k), model, q, cfg.alpha, select_rng, cfg.global_counter);
        }
        if (callbacks.on_step) callbacks.on_step({Phase::majorization, epoch + 1, batches, out.W, stats, nullptr});
        // Cold start: A^i starts at zero and needs p rank-one terms to be invertible.
        const SweepReport sweep = minimization_sweep(out.W, stats, cfg.solver, p);
        out.skipped_rows += static_cast<std::int64_t>(sweep.skipped.size());
        out.cholesky_fallbacks += sweep.cholesky_fallbacks;
        if (callbacks.on_step) callbacks.on_step({Phase::minimization, epoch + 1, batches, out.W, stats, nullptr});

        out.samples += got;
        ++batches;
        emitted_last = false;
        if (batches_per_epoch > 0 && batches % batches_per_epoch == 0) {
            ++epoch;
            if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, &stats, nullptr});
            emitted_last = true;
        }
        if (got < want) break;
    }
    if (!emitted_last) {
        ++epoch;
        if (callbacks.on_epoch) callbacks.on_epoch({epoch, out.W, &stats, nullptr});
    }
    out.epochs = epoch;
    return out;
}

} // namespace mmica
