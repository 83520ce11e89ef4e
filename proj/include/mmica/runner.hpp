#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmica/metrics.hpp"

namespace mmica {

enum class AlgoKind { incremental_mm, online_mm, sgd, sag, batch_mm };

AlgoKind parse_algo(std::string_view name);
std::string to_string(AlgoKind algo);

/// Everything needed to reproduce one solver run on a given dataset.
struct RunSpec {
    std::string label; // trace `algo` column; defaults to the algorithm name
    AlgoKind algo = AlgoKind::incremental_mm;
    DensityModel density;
    std::optional<Index> epochs;
    std::optional<std::int64_t> max_samples;
    Index batch_size = 1000;
    Index q = 2;
    double alpha = 0.5;
    Selection selection = Selection::greedy;
    InitKind init = InitKind::whiten;
    // SGD/SAG step; empty means tune over {1e-3, 1e-2, 1e-1, 1}.
    std::optional<double> step = 0.1;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;
    bool grad_identity = true;
    bool zero_init_memory = false;
    bool global_counter = false;
    SolverOptions solver;

    bool online() const { return max_samples.has_value(); }
    // Throws InvalidConfig for combinations the solvers cannot run.
    void validate() const;
    // Canonical key=value text used for the config hash.
    std::string canonical() const;
};

enum class RunStatus { ok, diverged, failed };
std::string to_string(RunStatus s);

struct RunTrace {
    std::string algo;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string git_describe;
    RunStatus status = RunStatus::ok;
    std::string message;
    std::optional<double> chosen_step;
    std::vector<MetricRecord> records;
    Matrix W;
};

struct TrainTestSplit {
    Matrix train;
    Matrix test;
};

// The last ceil(test_fraction * n) columns are held out.
TrainTestSplit split_train_test(const Matrix& X, double test_fraction);

/// Runs one spec on `data`, evaluating metrics after initialization and after
/// every epoch. Divergence and engine errors end the run early with a status;
/// the records gathered so far are kept.
RunTrace execute_run(const Dataset& data, const RunSpec& spec);

// Columns: algo,seed,epoch,wall_time_s,train_loss,surrogate_loss,test_loss,grad_norm,amari
void write_trace_csv(std::ostream& out, const RunTrace& trace, bool header = true);
void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace);
void write_trace_meta(const std::filesystem::path& path, const RunTrace& trace);

std::string format_number(double v);
std::string fnv1a_hex(const std::string& text);
std::string git_describe();

/// Sweep description: dataset source, shared defaults, one RunSpec template
/// per [algo.NAME] section, seeds and output directory.
struct BenchConfig {
    std::optional<std::filesystem::path> data_path;
    std::optional<std::filesystem::path> mixing_path;
    Index gen_p = 0;
    Index gen_n = 0;
    std::optional<std::uint64_t> gen_seed;
    std::vector<RunSpec> algorithms;
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output = "bench_out";
    int jobs = 1;

    void validate() const;
};

/// Flat key = value lines, '#' comments, and [algo.NAME] sections. Global keys
/// act as defaults for every section; relative paths resolve against `base_dir`.
BenchConfig parse_bench_config(const std::string& text, const std::filesystem::path& base_dir = {});
BenchConfig load_bench_config(const std::filesystem::path& path);

struct BenchResult {
    std::vector<RunTrace> traces;
    std::filesystem::path summary_path;
};

BenchResult run_bench(const BenchConfig& cfg);

// Quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

// CLI entry points; return process exit codes (0 ok, 1 I/O or format error,
// 2 usage error, 3 diverged).
int cli_gen(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_bench(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

} // namespace mmica
