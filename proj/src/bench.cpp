#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "mmica/errors.hpp"
#include "mmica/runner.hpp"

namespace mmica {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

long long to_integer(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw InvalidConfig("key '" + key + "': expected an integer, got '" + value + "'");
    }
}

double to_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw InvalidConfig("key '" + key + "': expected a number, got '" + value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw InvalidConfig("key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& value) {
    std::vector<std::uint64_t> seeds;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto dash = item.find('-', 1);
        if (dash != std::string::npos) {
            const long long lo = to_integer("seeds", trim(item.substr(0, dash)));
            const long long hi = to_integer("seeds", trim(item.substr(dash + 1)));
            if (lo < 0 || hi < lo) throw InvalidConfig("seeds: bad range '" + item + "'");
            for (long long s = lo; s <= hi; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
        } else {
            const long long s = to_integer("seeds", item);
            if (s < 0) throw InvalidConfig("seeds must be non-negative");
            seeds.push_back(static_cast<std::uint64_t>(s));
        }
    }
    return seeds;
}

// Applies one run-level key; returns false if the key is not a run knob.
bool apply_run_key(RunSpec& spec, const std::string& key, const std::string& value) {
    if (key == "algo") spec.algo = parse_algo(value);
    else if (key == "density") spec.density = parse_density(value);
    else if (key == "epochs") {
        spec.epochs = to_integer(key, value);
        spec.max_samples.reset();
    } else if (key == "max_samples") {
        spec.max_samples = to_integer(key, value);
        spec.epochs.reset();
    } else if (key == "batch_size") spec.batch_size = to_integer(key, value);
    else if (key == "q") spec.q = to_integer(key, value);
    else if (key == "alpha") spec.alpha = to_real(key, value);
    else if (key == "selection") spec.selection = parse_selection(value);
    else if (key == "init") spec.init = parse_init(value);
    else if (key == "step") {
        if (value == "auto") spec.step.reset();
        else spec.step = to_real(key, value);
    } else if (key == "test_fraction") spec.test_fraction = to_real(key, value);
    else if (key == "grad_no_identity") spec.grad_identity = !to_bool(key, value);
    else if (key == "zero_init_memory") spec.zero_init_memory = to_bool(key, value);
    else if (key == "global_counter") spec.global_counter = to_bool(key, value);
    else if (key == "pcg_tol") spec.solver.tol = to_real(key, value);
    else if (key == "pcg_max_iter") spec.solver.max_iter = static_cast<int>(to_integer(key, value));
    else return false;
    return true;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
    const std::filesystem::path p(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

} // namespace

void BenchConfig::validate() const {
    if (algorithms.empty()) throw InvalidConfig("bench config defines no [algo.NAME] section");
    if (seeds.empty()) throw InvalidConfig("bench config defines no seeds");
    if (!data_path && (gen_p < 2 || gen_n < 1)) {
        throw InvalidConfig("bench config needs 'data' or 'generate.p' >= 2 and 'generate.n' >= 1");
    }
    if (jobs < 1) throw InvalidConfig("jobs must be positive");
    std::set<std::string> labels;
    for (const RunSpec& spec : algorithms) {
        if (!labels.insert(spec.label).second) throw InvalidConfig("duplicate algorithm label '" + spec.label + "'");
        spec.validate();
    }
}

BenchConfig parse_bench_config(const std::string& text, const std::filesystem::path& base_dir) {
    KeyValues globals;
    std::vector<std::pair<std::string, KeyValues>> sections;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.rfind("[algo.", 0) != 0 || line.size() <= 7) {
                throw InvalidConfig("line " + std::to_string(line_no) + ": expected a section header [algo.NAME]");
            }
            sections.emplace_back(line.substr(6, line.size() - 7), KeyValues{});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidConfig("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        (sections.empty() ? globals : sections.back().second).emplace_back(std::move(key), std::move(value));
    }

    BenchConfig cfg;
    RunSpec defaults;
    defaults.epochs = 20;
    for (const auto& [key, value] : globals) {
        if (key == "data") cfg.data_path = resolve(base_dir, value);
        else if (key == "mixing") cfg.mixing_path = resolve(base_dir, value);
        else if (key == "generate.p") cfg.gen_p = to_integer(key, value);
        else if (key == "generate.n") cfg.gen_n = to_integer(key, value);
        else if (key == "generate.seed") cfg.gen_seed = static_cast<std::uint64_t>(to_integer(key, value));
        else if (key == "seeds") cfg.seeds = parse_seeds(value);
        else if (key == "output") cfg.output = resolve(base_dir, value);
        else if (!apply_run_key(defaults, key, value)) throw InvalidConfig("unknown key '" + key + "'");
    }
    for (const auto& [name, keys] : sections) {
        RunSpec spec = defaults;
        spec.label = name;
        bool has_algo = false;
        for (const auto& [key, value] : keys) {
            if (!apply_run_key(spec, key, value)) {
                throw InvalidConfig("unknown key '" + key + "' in [algo." + name + "]");
            }
            has_algo = has_algo || key == "algo";
        }
        if (!has_algo) spec.algo = parse_algo(name);
        cfg.algorithms.push_back(std::move(spec));
    }
    return cfg;
}

BenchConfig load_bench_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open bench config '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_bench_config(text.str(), path.parent_path());
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) return kNaN;
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void write_summary(const std::filesystem::path& path, const BenchConfig& cfg, const std::vector<RunTrace>& traces) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "algo,epoch,metric,count,q25,median,q75\n";
    using Field = double MetricRecord::*;
    const std::vector<std::pair<std::string, Field>> fields = {
        {"wall_time_s", &MetricRecord::wall_time_s}, {"train_loss", &MetricRecord::train_loss},
        {"surrogate_loss", &MetricRecord::surrogate_loss}, {"test_loss", &MetricRecord::test_loss},
        {"grad_norm", &MetricRecord::grad_norm}, {"amari", &MetricRecord::amari},
    };
    for (const RunSpec& spec : cfg.algorithms) {
        std::size_t ok = 0;
        std::size_t failed = 0;
        std::map<Index, std::vector<const MetricRecord*>> by_epoch;
        for (const RunTrace& t : traces) {
            if (t.algo != spec.label) continue;
            if (t.status != RunStatus::ok) {
                ++failed;
                continue;
            }
            ++ok;
            for (const MetricRecord& r : t.records) by_epoch[r.epoch].push_back(&r);
        }
        for (const auto& [epoch, records] : by_epoch) {
            for (const auto& [name, field] : fields) {
                std::vector<double> values;
                for (const MetricRecord* r : records) {
                    if (!std::isnan(r->*field)) values.push_back(r->*field);
                }
                out << spec.label << ',' << epoch << ',' << name << ',' << values.size() << ','
                    << format_number(quantile(values, 0.25)) << ',' << format_number(quantile(values, 0.5)) << ','
                    << format_number(quantile(values, 0.75)) << '\n';
            }
        }
        out << spec.label << ",all,runs_ok," << ok << ",nan,nan,nan\n";
        out << spec.label << ",all,runs_failed," << failed << ",nan,nan,nan\n";
    }
}

void write_runs(const std::filesystem::path& path, const std::vector<RunTrace>& traces,
                const std::vector<std::string>& files) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "algo,seed,status,trace,message\n";
    for (std::size_t k = 0; k < traces.size(); ++k) {
        std::string msg = traces[k].message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        out << traces[k].algo << ',' << traces[k].seed << ',' << to_string(traces[k].status) << ',' << files[k] << ','
            << msg << '\n';
    }
}

} // namespace

BenchResult run_bench(const BenchConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output);

    // Datasets are built up front so worker threads only read them.
    std::map<std::uint64_t, Dataset> datasets;
    if (cfg.data_path) {
        Dataset shared = cfg.data_path->extension() == ".csv" ? load_csv(*cfg.data_path) : load_dataset(*cfg.data_path);
        if (cfg.mixing_path) shared.mixing = load_matrix(*cfg.mixing_path);
        validate_dataset(shared);
        for (const std::uint64_t seed : cfg.seeds) datasets.emplace(seed, shared);
    } else {
        for (const std::uint64_t seed : cfg.seeds) {
            datasets.emplace(seed, gen_laplace_mixture(cfg.gen_p, cfg.gen_n, cfg.gen_seed.value_or(seed)));
        }
    }

    struct Task {
        const RunSpec* spec;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const RunSpec& spec : cfg.algorithms) {
        for (const std::uint64_t seed : cfg.seeds) tasks.push_back({&spec, seed});
    }

    BenchResult result;
    result.traces.resize(tasks.size());
    std::vector<std::string> files(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < tasks.size(); k = next++) {
            RunSpec spec = *tasks[k].spec;
            spec.seed = tasks[k].seed;
            RunTrace& trace = result.traces[k];
            try {
                trace = execute_run(datasets.at(spec.seed), spec);
            } catch (const Error& e) {
                trace.algo = spec.label;
                trace.seed = spec.seed;
                trace.config_hash = fnv1a_hex(spec.canonical());
                trace.git_describe = git_describe();
                trace.status = RunStatus::failed;
                trace.message = e.what();
            }
            files[k] = "trace_" + spec.label + "_seed" + std::to_string(spec.seed) + ".csv";
            write_trace_csv(cfg.output / files[k], trace);
            write_trace_meta(cfg.output / (files[k] + ".meta.json"), trace);
        }
    };
    const auto jobs = static_cast<std::size_t>(std::max(1, cfg.jobs));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(jobs, tasks.size()); ++t) pool.emplace_back(worker);
    }

    result.summary_path = cfg.output / "summary.csv";
    write_summary(result.summary_path, cfg, result.traces);
    write_runs(cfg.output / "runs.csv", result.traces, files);
    return result;
}

} // namespace mmica
