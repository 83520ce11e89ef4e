#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"

#include "mmica/errors.hpp"
#include "mmica/runner.hpp"

namespace mmica {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

// Parses `args` (program name excluded); returns an exit code when the
// caller should stop, e.g. after --help or a usage error.
std::optional<int> parse(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    return std::nullopt;
}

template <class F>
int guarded(std::ostream& err, const CLI::App& app, F&& body) {
    try {
        return body();
    } catch (const InvalidConfig& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const Diverged& e) {
        err << "diverged: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    }
}

Dataset load_any(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? load_csv(path) : load_dataset(path);
}

} // namespace

int cli_gen(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Generate a Laplace-source mixture dataset", "mmica gen");
    Index p = 0;
    Index n = 0;
    std::uint64_t seed = 0;
    std::string out_path;
    std::string mixing_out;
    app.add_option("--p", p, "number of sources / sensors")->required();
    app.add_option("--n", n, "number of samples")->required();
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--out", out_path, "output ICAD dataset")->required();
    app.add_option("--mixing-out", mixing_out, "output ICAM mixing matrix");
    if (auto code = parse(app, args, out, err)) return *code;

    return guarded(err, app, [&] {
        if (p < 2) throw InvalidConfig("--p must be at least 2");
        if (n < 1) throw InvalidConfig("--n must be positive");
        const Dataset data = gen_laplace_mixture(p, n, seed);
        save_dataset(out_path, data.X);
        if (!mixing_out.empty()) save_matrix(mixing_out, *data.mixing);
        out << "wrote p=" << p << " n=" << n << " seed=" << seed << " to " << out_path;
        if (!mixing_out.empty()) out << " (mixing: " << mixing_out << ")";
        out << '\n';
        return kExitOk;
    });
}

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Run one ICA solver and record its trace", "mmica run");
    RunSpec spec;
    std::string algo = "incremental_mm";
    std::string density = "huber";
    std::string selection = "greedy";
    std::string init = "whiten";
    std::string step = "0.1";
    std::string data_path;
    std::string mixing_path;
    std::string trace_path;
    std::string w_out;
    Index epochs = 0;
    std::int64_t max_samples = 0;
    bool grad_no_identity = false;

    app.add_option("--algo", algo, "incremental_mm|online_mm|sgd|sag|batch_mm")->capture_default_str();
    app.add_option("--data", data_path, "ICAD dataset or .csv file")->required();
    app.add_option("--density", density, "huber|student|logcosh")->capture_default_str();
    auto* epochs_opt = app.add_option("--epochs", epochs, "passes over the training set");
    auto* samples_opt = app.add_option("--max-samples", max_samples, "streamed samples (online mode)");
    epochs_opt->excludes(samples_opt);
    app.add_option("--batch-size", spec.batch_size, "mini-batch size")->capture_default_str();
    app.add_option("--q", spec.q, "sources updated per sample")->capture_default_str();
    app.add_option("--alpha", spec.alpha, "online step exponent in [0.5, 1)")->capture_default_str();
    app.add_option("--step", step, "SGD/SAG step size, or 'auto'")->capture_default_str();
    app.add_option("--selection", selection, "greedy|random|full")->capture_default_str();
    app.add_option("--test-fraction", spec.test_fraction, "held-out fraction")->capture_default_str();
    app.add_option("--seed", spec.seed, "run seed")->capture_default_str();
    app.add_option("--init", init, "whiten|identity")->capture_default_str();
    app.add_option("--trace", trace_path, "trace CSV output");
    app.add_option("--w-out", w_out, "final unmixing matrix (ICAM)");
    app.add_option("--mixing", mixing_path, "true mixing matrix (ICAM) for the Amari distance");
    app.add_option("--label", spec.label, "value of the trace algo column");
    app.add_option("--pcg-tol", spec.solver.tol, "PCG relative residual tolerance")->capture_default_str();
    app.add_option("--pcg-max-iter", spec.solver.max_iter, "PCG iteration cap (0 = 2p)");
    app.add_flag("--grad-no-identity", grad_no_identity, "drop the -I term from the gradient metric");
    app.add_flag("--zero-init-memory", spec.zero_init_memory, "start the per-sample memory at zero");
    app.add_flag("--global-counter", spec.global_counter, "one online step counter shared by all rows");
    if (auto code = parse(app, args, out, err)) return *code;

    return guarded(err, app, [&] {
        spec.algo = parse_algo(algo);
        spec.density = parse_density(density);
        spec.selection = parse_selection(selection);
        spec.init = parse_init(init);
        spec.grad_identity = !grad_no_identity;
        if (step == "auto") {
            spec.step.reset();
        } else {
            try {
                spec.step = std::stod(step);
            } catch (const std::exception&) {
                throw InvalidConfig("--step expects a number or 'auto'");
            }
        }
        if (samples_opt->count() > 0) spec.max_samples = max_samples;
        else spec.epochs = epochs_opt->count() > 0 ? epochs : 10;
        spec.validate();

        Dataset data = load_any(data_path);
        if (!mixing_path.empty()) data.mixing = load_matrix(mixing_path);
        validate_dataset(data);

        const RunTrace trace = execute_run(data, spec);
        if (!trace_path.empty()) {
            write_trace_csv(trace_path, trace);
            write_trace_meta(trace_path + ".meta.json", trace);
        }
        if (!w_out.empty() && trace.W.size() > 0) save_matrix(w_out, trace.W);

        if (trace.status == RunStatus::diverged) {
            err << "diverged: " << trace.message << '\n';
            return kExitDiverged;
        }
        if (trace.status == RunStatus::failed) {
            err << "error: " << trace.message << '\n';
            return kExitIo;
        }
        out << trace.algo << ": " << trace.records.size() << " records";
        if (!trace.records.empty()) {
            const MetricRecord& last = trace.records.back();
            out << ", final train_loss=" << format_number(last.train_loss)
                << " test_loss=" << format_number(last.test_loss) << " amari=" << format_number(last.amari);
        }
        if (trace.chosen_step) out << ", step=" << format_number(*trace.chosen_step);
        out << '\n';
        return kExitOk;
    });
}

int cli_bench(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Run a multi-seed benchmark sweep", "mmica bench");
    std::string config_path;
    std::string output;
    int jobs = 0;
    app.add_option("config", config_path, "bench config file")->required();
    app.add_option("--jobs", jobs, "parallel runs (default: $MMICA_JOBS or 1)");
    app.add_option("--output", output, "output directory (overrides the config)");
    if (auto code = parse(app, args, out, err)) return *code;

    return guarded(err, app, [&] {
        BenchConfig cfg = load_bench_config(config_path);
        if (jobs == 0) {
            const char* env = std::getenv("MMICA_JOBS");
            jobs = env != nullptr ? std::atoi(env) : 1;
        }
        cfg.jobs = jobs;
        if (!output.empty()) cfg.output = output;
        const BenchResult result = run_bench(cfg);
        std::size_t ok = 0;
        for (const RunTrace& t : result.traces) ok += t.status == RunStatus::ok ? 1 : 0;
        out << result.traces.size() << " runs (" << ok << " ok), summary at " << result.summary_path.string() << '\n';
        return kExitOk;
    });
}

int cli_main(int argc, char** argv) {
    const std::string usage = "usage: mmica {gen|run|bench} [options]   (mmica COMMAND --help for details)\n";
    if (argc < 2) {
        std::cerr << usage;
        return kExitUsage;
    }
    const std::string command = argv[1];
    const std::vector<std::string> args(argv + 2, argv + argc);
    if (command == "gen") return cli_gen(args, std::cout, std::cerr);
    if (command == "run") return cli_run(args, std::cout, std::cerr);
    if (command == "bench") return cli_bench(args, std::cout, std::cerr);
    if (command == "--help" || command == "-h") {
        std::cout << usage;
        return kExitOk;
    }
    std::cerr << "unknown command '" << command << "'\n" << usage;
    return kExitUsage;
}

} // namespace mmica
