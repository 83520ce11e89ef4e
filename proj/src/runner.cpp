#include "mmica/runner.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "mmica/errors.hpp"

#ifndef MMICA_GIT_DESCRIBE
#define MMICA_GIT_DESCRIBE "unknown"
#endif

namespace mmica {

AlgoKind parse_algo(std::string_view name) {
    if (name == "incremental_mm") return AlgoKind::incremental_mm;
    if (name == "online_mm") return AlgoKind::online_mm;
    if (name == "sgd") return AlgoKind::sgd;
    if (name == "sag") return AlgoKind::sag;
    if (name == "batch_mm") return AlgoKind::batch_mm;
    throw InvalidConfig("unknown algorithm '" + std::string(name) +
                        "' (expected incremental_mm|online_mm|sgd|sag|batch_mm)");
}

std::string to_string(AlgoKind algo) {
    switch (algo) {
    case AlgoKind::incremental_mm: return "incremental_mm";
    case AlgoKind::online_mm: return "online_mm";
    case AlgoKind::sgd: return "sgd";
    case AlgoKind::sag: return "sag";
    case AlgoKind::batch_mm: return "batch_mm";
    }
    return "?";
}

std::string to_string(RunStatus s) {
    switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::diverged: return "diverged";
    case RunStatus::failed: return "failed";
    }
    return "?";
}

void RunSpec::validate() const {
    if (epochs.has_value() == max_samples.has_value()) {
        throw InvalidConfig("exactly one of epochs / max_samples must be given");
    }
    if (epochs && *epochs < 0) throw InvalidConfig("epochs must be non-negative");
    if (max_samples && (algo == AlgoKind::sag || algo == AlgoKind::batch_mm)) {
        throw InvalidConfig(to_string(algo) + " only runs in the finite-sum setting (use --epochs)");
    }
    if (algo == AlgoKind::incremental_mm && max_samples) {
        throw InvalidConfig("incremental_mm only runs in the finite-sum setting (use --epochs)");
    }
    if (!(test_fraction >= 0.0 && test_fraction <= 0.5)) throw InvalidConfig("test fraction must lie in [0, 0.5]");
    if (batch_size < 1) throw InvalidConfig("batch size must be positive");
    if (q < 1) throw InvalidConfig("q must be positive");
    if (!(alpha >= 0.5 && alpha < 1.0)) throw InvalidConfig("alpha must lie in [0.5, 1)");
    if (step && !(*step > 0.0)) throw InvalidConfig("step must be positive");
}

std::string RunSpec::canonical() const {
    std::ostringstream s;
    s << "label=" << label << "\nalgo=" << to_string(algo) << "\ndensity=" << to_string(density.kind)
      << "\nepochs=" << (epochs ? std::to_string(*epochs) : "-")
      << "\nmax_samples=" << (max_samples ? std::to_string(*max_samples) : "-") << "\nbatch_size=" << batch_size
      << "\nq=" << q << "\nalpha=" << format_number(alpha) << "\nselection=" << to_string(selection)
      << "\ninit=" << to_string(init) << "\nstep=" << (step ? format_number(*step) : "auto")
      << "\ntest_fraction=" << format_number(test_fraction) << "\nseed=" << seed
      << "\ngrad_identity=" << grad_identity << "\nzero_init_memory=" << zero_init_memory
      << "\nglobal_counter=" << global_counter << "\npcg_tol=" << format_number(solver.tol)
      << "\npcg_max_iter=" << solver.max_iter << "\n";
    return s.str();
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::string git_describe() { return MMICA_GIT_DESCRIBE; }

TrainTestSplit split_train_test(const Matrix& X, double test_fraction) {
    const Index n = X.cols();
    const auto held = static_cast<Index>(std::ceil(test_fraction * static_cast<double>(n)));
    if (held >= n) throw InvalidConfig("test split leaves no training samples");
    return {X.leftCols(n - held), X.rightCols(held)};
}

namespace {

using Clock = std::chrono::steady_clock;

// Solver time with metric evaluation excluded.
class Stopwatch {
public:
    Stopwatch() : start_(Clock::now()) {}
    double pause() {
        paused_at_ = Clock::now();
        return std::chrono::duration<double>(paused_at_ - start_).count() - excluded_;
    }
    void resume() { excluded_ += std::chrono::duration<double>(Clock::now() - paused_at_).count(); }

private:
    Clock::time_point start_;
    Clock::time_point paused_at_;
    double excluded_ = 0.0;
};

template <class F>
double or_nan(F&& f) {
    try {
        return f();
    } catch (const Error&) {
        return kNaN;
    }
}

class Recorder {
public:
    Recorder(const Dataset& data, const TrainTestSplit& split, const RunSpec& spec, RunTrace& trace)
        : data_(data), split_(split), spec_(spec), trace_(trace) {}

    void operator()(const EpochEvent& ev) {
        MetricRecord r;
        r.wall_time_s = clock_.pause();
        r.epoch = ev.epoch;
        const DensityModel& model = spec_.density;
        r.train_loss = or_nan([&] { return empirical_loss(ev.W, split_.train, model); });
        if (ev.mem != nullptr) {
            r.surrogate_loss = or_nan([&] { return surrogate_loss(ev.W, ev.mem->u, ev.mem->fu, split_.train); });
        }
        if (split_.test.cols() > 0) {
            r.test_loss = or_nan([&] { return leftout_loss(ev.W, split_.test, model); });
        }
        r.grad_norm = or_nan([&] { return grad_norm(ev.W, split_.train, model, spec_.grad_identity); });
        if (data_.mixing) {
            r.amari = or_nan([&] { return amari_distance(ev.W, *data_.mixing); });
        }
        trace_.records.push_back(r);
        trace_.W = ev.W;
        clock_.resume();
    }

private:
    const Dataset& data_;
    const TrainTestSplit& split_;
    const RunSpec& spec_;
    RunTrace& trace_;
    Stopwatch clock_;
};

MMConfig engine_config(const RunSpec& spec, const Matrix& W0) {
    MMConfig cfg;
    cfg.batch_size = spec.batch_size;
    cfg.q = std::min<Index>(spec.q, W0.rows());
    cfg.alpha = spec.alpha;
    cfg.selection = spec.selection;
    cfg.solver = spec.solver;
    cfg.seed = spec.seed;
    cfg.init = spec.init;
    cfg.w_init = W0;
    cfg.zero_init_memory = spec.zero_init_memory;
    cfg.global_counter = spec.global_counter;
    return cfg;
}

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

void run_once(const Dataset& data, const TrainTestSplit& split, const RunSpec& spec, double step, const Matrix& W0,
              RunTrace& trace) {
    Recorder recorder(data, split, spec, trace);
    Callbacks callbacks;
    callbacks.on_epoch = [&](const EpochEvent& ev) { recorder(ev); };
    const Matrix& X = split.train;
    const Index batches_per_epoch = ceil_div(X.cols(), spec.batch_size);
    const std::int64_t max_samples =
        spec.max_samples.value_or(static_cast<std::int64_t>(spec.epochs.value_or(0) * batches_per_epoch) *
                                  spec.batch_size);
    SGDConfig sgd;
    sgd.step = step;
    sgd.batch_size = spec.batch_size;
    sgd.gradient_identity = spec.grad_identity;
    sgd.seed = spec.seed;

    RunOutcome outcome;
    switch (spec.algo) {
    case AlgoKind::incremental_mm:
        outcome = run_incremental(X, spec.density, engine_config(spec, W0), *spec.epochs, callbacks);
        break;
    case AlgoKind::online_mm: {
        MatrixStream stream(X, true);
        outcome = run_online(stream, spec.density, engine_config(spec, W0), max_samples, batches_per_epoch, callbacks);
        break;
    }
    case AlgoKind::batch_mm:
        outcome = full_batch_mm_run(X, W0, spec.density, *spec.epochs, spec.solver, callbacks);
        break;
    case AlgoKind::sgd:
        if (spec.online()) {
            sgd.schedule = StepSchedule::inv_sqrt;
            MatrixStream stream(X, true);
            outcome = sgd_run_online(stream, W0, spec.density, sgd, max_samples, batches_per_epoch, callbacks);
        } else {
            outcome = sgd_run(X, W0, spec.density, sgd, *spec.epochs, callbacks);
        }
        break;
    case AlgoKind::sag:
        outcome = sag_run(X, W0, spec.density, sgd, *spec.epochs, callbacks);
        break;
    }
    trace.W = outcome.W;
}

void run_guarded(const Dataset& data, const TrainTestSplit& split, const RunSpec& spec, double step, const Matrix& W0,
                 RunTrace& trace) {
    try {
        run_once(data, split, spec, step, W0, trace);
    } catch (const Diverged& e) {
        trace.status = RunStatus::diverged;
        trace.message = e.what();
    } catch (const InvalidConfig&) {
        throw;
    } catch (const Error& e) {
        trace.status = RunStatus::failed;
        trace.message = e.what();
    }
}

bool uses_step(AlgoKind algo) { return algo == AlgoKind::sgd || algo == AlgoKind::sag; }

} // namespace

RunTrace execute_run(const Dataset& data, const RunSpec& spec) {
    spec.validate();
    RunTrace trace;
    trace.algo = spec.label.empty() ? to_string(spec.algo) : spec.label;
    trace.seed = spec.seed;
    trace.config_hash = fnv1a_hex(spec.canonical());
    trace.git_describe = git_describe();

    const TrainTestSplit split = split_train_test(data.X, spec.test_fraction);
    if (split.train.cols() < spec.batch_size) {
        throw InvalidConfig("training set (" + std::to_string(split.train.cols()) + " samples) is smaller than the batch size");
    }
    MMConfig init_cfg;
    init_cfg.init = spec.init;
    init_cfg.seed = spec.seed;
    const Matrix W0 = initial_unmixing(split.train, init_cfg, spec.online() ? SubsampleMode::first : SubsampleMode::random);

    if (!uses_step(spec.algo) || spec.step) {
        run_guarded(data, split, spec, spec.step.value_or(0.1), W0, trace);
        return trace;
    }

    // Step tuning: keep the grid point with the best final held-out (else train) loss.
    std::optional<RunTrace> best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (const double step : {1e-3, 1e-2, 1e-1, 1.0}) {
        RunTrace candidate = trace;
        candidate.chosen_step = step;
        run_guarded(data, split, spec, step, W0, candidate);
        if (candidate.status != RunStatus::ok || candidate.records.empty()) continue;
        const MetricRecord& last = candidate.records.back();
        const double loss = std::isnan(last.test_loss) ? last.train_loss : last.test_loss;
        if (loss < best_loss) {
            best_loss = loss;
            best = std::move(candidate);
        }
    }
    if (!best) {
        trace.status = RunStatus::diverged;
        trace.message = "every step size in the tuning grid diverged";
        return trace;
    }
    return *best;
}

void write_trace_csv(std::ostream& out, const RunTrace& trace, bool header) {
    if (header) out << "algo,seed,epoch,wall_time_s,train_loss,surrogate_loss,test_loss,grad_norm,amari\n";
    for (const MetricRecord& r : trace.records) {
        out << trace.algo << ',' << trace.seed << ',' << r.epoch << ',' << format_number(r.wall_time_s) << ','
            << format_number(r.train_loss) << ',' << format_number(r.surrogate_loss) << ','
            << format_number(r.test_loss) << ',' << format_number(r.grad_norm) << ',' << format_number(r.amari)
            << '\n';
    }
}

void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    write_trace_csv(out, trace);
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_trace_meta(const std::filesystem::path& path, const RunTrace& trace) {
    nlohmann::json meta = {
        {"algo", trace.algo},
        {"seed", trace.seed},
        {"config_hash", trace.config_hash},
        {"git_describe", trace.git_describe},
        {"status", to_string(trace.status)},
        {"message", trace.message},
        {"records", trace.records.size()},
    };
    if (trace.chosen_step) meta["chosen_step"] = *trace.chosen_step;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << meta.dump(2) << '\n';
}

} // namespace mmica
