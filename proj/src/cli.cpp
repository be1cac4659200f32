#include "dbal/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "dbal/config.hpp"
#include "dbal/errors.hpp"
#include "dbal/loop.hpp"
#include "dbal/metrics.hpp"

namespace dbal::cli {
namespace {

namespace fs = std::filesystem;

struct Cell {
    ExperimentConfig config;
    fs::path dir;
    std::vector<RoundReport> reports;
    std::string error;
    int status = kSuccess;
};

std::string variant_name(const ExperimentConfig& c) {
    return "k" + std::to_string(c.loop.query_size) + "_" +
           (c.loop.direction == SelectionDirection::most_uncertain ? "most" : "least");
}

fs::path output_root(const CommonOptions& options, const ExperimentConfig& config) {
    if (!options.out.empty()) return options.out;
    if (!config.output.dir.empty()) return config.output.dir;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    return "runs";
}

fs::path cell_dir(const fs::path& experiment_dir, const ExperimentConfig& c) {
    return experiment_dir / function_label(c.loop.function) / variant_name(c);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write " + path.string());
    out << text;
}

std::string fmt(double v, int precision = 4) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream out;
    out << std::fixed << std::setprecision(precision) << v;
    return out.str();
}

// Loads and validates the config; diagnostics go to `err`.
std::optional<ExperimentConfig> load_or_report(const CommonOptions& options, std::ostream& err) {
    try {
        return load_config(options.config, options.seed);
    } catch (const ConfigFileError& e) {
        err << e.what() << '\n';
    }
    return std::nullopt;
}

int status_for(const std::exception& e) {
    return dynamic_cast<const ConfigError*>(&e) ? kConfigFailure : kRuntimeFailure;
}

void run_cell(Cell& cell, const DatasetSplits& splits) {
    try {
        fs::create_directories(cell.dir);
        const std::string resolved = render_config(cell.config);
        const fs::path resolved_path = cell.dir / "config.resolved";
        // a directory holding a different configuration is started over
        const bool same_config = fs::exists(resolved_path) && read_file(resolved_path) == resolved;
        write_file(resolved_path, resolved);
        ExperimentOutput output{cell.dir, same_config, cell.config.output.checkpoints};
        cell.reports = run_experiment(cell.config.loop, splits, output);
    } catch (const std::exception& e) {
        cell.error = e.what();
        cell.status = status_for(e);
    }
}

int run_cells(std::vector<Cell>& cells, const DatasetSplits& splits, std::size_t jobs, std::ostream& log,
              std::ostream& err) {
    std::mutex io;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            {
                std::lock_guard lock(io);
                log << "running " << cells[i].dir.string() << '\n' << std::flush;
            }
            run_cell(cells[i], splits);
            std::lock_guard lock(io);
            if (cells[i].status != kSuccess) {
                err << "failed " << cells[i].dir.string() << ": " << cells[i].error << '\n';
            } else if (!cells[i].reports.empty()) {
                const auto& last = cells[i].reports.back();
                log << "done " << cells[i].dir.string() << ": " << cells[i].reports.size()
                    << " rounds, final |D_T| " << last.labeled_size << ", test accuracy "
                    << fmt(last.test_accuracy) << '\n';
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    pool.clear();
    int status = kSuccess;
    for (const auto& c : cells) status = std::max(status, c.status);
    return status;
}

std::optional<DatasetSplits> load_data(const ExperimentConfig& config, std::ostream& err, int& status) {
    try {
        return load_splits(config);
    } catch (const std::exception& e) {
        err << "cannot load data: " << e.what() << '\n';
        status = dynamic_cast<const LoadError*>(&e) ? kRuntimeFailure : status_for(e);
    }
    return std::nullopt;
}

std::optional<std::optional<AcquisitionFunction>> parse_variant(const std::string& name) {
    if (name == "none") return std::optional<AcquisitionFunction>{};
    if (auto f = parse_acquisition_function(name)) return std::optional<AcquisitionFunction>{*f};
    return std::nullopt;
}

void write_series(const fs::path& path, const std::vector<RoundReport>& reports, std::size_t rounds) {
    std::ostringstream out;
    out << "round,labeled_size,eval_loss,eval_accuracy,test_loss,test_accuracy,test_mc_loss,test_mc_accuracy\n";
    for (std::size_t r = 0; r <= rounds; ++r) {
        if (r < reports.size()) {
            const auto& x = reports[r];
            out << r << ',' << x.labeled_size << ',' << fmt(x.eval_loss, 10) << ',' << fmt(x.eval_accuracy, 10)
                << ',' << fmt(x.test_loss, 10) << ',' << fmt(x.test_accuracy, 10) << ','
                << fmt(x.test_mc_loss, 10) << ',' << fmt(x.test_mc_accuracy, 10) << '\n';
        } else {
            out << r << ",NA,NA,NA,NA,NA,NA,NA\n";
        }
    }
    write_file(path, out.str());
}

}  // namespace

int cmd_defaults(std::ostream& out) {
    out << render_config(default_config(), false);
    return kSuccess;
}

int cmd_run(const CommonOptions& options, std::ostream& log, std::ostream& err) {
    auto config = load_or_report(options, err);
    if (!config) return kConfigFailure;
    int status = kSuccess;
    auto splits = load_data(*config, err, status);
    if (!splits) return status;
    const fs::path experiment = output_root(options, *config) / config->output.name;
    std::vector<Cell> cells{{*config, cell_dir(experiment, *config), {}, {}, kSuccess}};
    status = run_cells(cells, *splits, 1, log, err);
    if (status == kSuccess) {
        std::ostringstream table;
        write_summary_csv(table, cells[0].reports);
        log << table.str();
    }
    return status;
}

int cmd_compare(const CommonOptions& options, const std::vector<std::string>& functions, std::ostream& log,
                std::ostream& err) {
    std::vector<std::optional<AcquisitionFunction>> variants;
    for (const auto& name : functions) {
        auto v = parse_variant(name);
        if (!v) {
            err << "unknown acquisition function '" << name
                << "' (expected bald, max_entropy, mean_std, random, none)\n";
            return kConfigFailure;
        }
        if (std::find(variants.begin(), variants.end(), *v) == variants.end()) variants.push_back(*v);
    }
    if (variants.size() < 2) {
        err << "compare needs at least two distinct functions\n";
        return kConfigFailure;
    }
    auto config = load_or_report(options, err);
    if (!config) return kConfigFailure;
    int status = kSuccess;
    auto splits = load_data(*config, err, status);
    if (!splits) return status;

    const fs::path experiment = output_root(options, *config) / config->output.name;
    fs::create_directories(experiment);
    write_file(experiment / "config.resolved", render_config(*config));
    std::vector<Cell> cells;
    for (const auto& v : variants) {
        ExperimentConfig c = *config;
        c.loop.function = v;
        cells.push_back({c, cell_dir(experiment, c), {}, {}, kSuccess});
    }
    status = run_cells(cells, *splits, options.jobs, log, err);
    if (status != kSuccess) return status;

    std::ostringstream combined;
    combined << "function,round,labeled_size,eval_loss,eval_accuracy,test_loss,test_accuracy\n";
    for (const auto& cell : cells) {
        const std::string label = function_label(cell.config.loop.function);
        write_series(experiment / ("series_" + label + ".csv"), cell.reports, config->loop.rounds);
        for (std::size_t r = 0; r <= config->loop.rounds; ++r) {
            combined << label << ',' << r;
            if (r < cell.reports.size()) {
                const auto& x = cell.reports[r];
                combined << ',' << x.labeled_size << ',' << fmt(x.eval_loss, 10) << ','
                         << fmt(x.eval_accuracy, 10) << ',' << fmt(x.test_loss, 10) << ','
                         << fmt(x.test_accuracy, 10) << '\n';
            } else {
                combined << ",NA,NA,NA,NA,NA\n";
            }
        }
    }
    write_file(experiment / "compare_series.csv", combined.str());
    log << "wrote " << (experiment / "compare_series.csv").string() << '\n';
    return kSuccess;
}

int cmd_ablate(const CommonOptions& options, AblationAxis axis, const std::vector<std::size_t>& query_sizes,
               const std::vector<std::string>& function_names, std::ostream& log, std::ostream& err) {
    if (axis == AblationAxis::query_size) {
        if (query_sizes.empty()) {
            err << "query-size ablation needs at least one value\n";
            return kConfigFailure;
        }
        if (std::find(query_sizes.begin(), query_sizes.end(), std::size_t{0}) != query_sizes.end()) {
            err << "query sizes must be positive\n";
            return kConfigFailure;
        }
    }
    std::vector<AcquisitionFunction> functions;
    for (const auto& name : function_names) {
        auto f = parse_acquisition_function(name);
        if (!f) {
            err << "unknown acquisition function '" << name << "'\n";
            return kConfigFailure;
        }
        functions.push_back(*f);
    }
    if (functions.empty()) {
        err << "ablation needs at least one acquisition function\n";
        return kConfigFailure;
    }
    auto config = load_or_report(options, err);
    if (!config) return kConfigFailure;
    int status = kSuccess;
    auto splits = load_data(*config, err, status);
    if (!splits) return status;

    const fs::path experiment = output_root(options, *config) / config->output.name;
    fs::create_directories(experiment);
    write_file(experiment / "config.resolved", render_config(*config));
    std::vector<Cell> cells;
    for (auto f : functions) {
        if (axis == AblationAxis::query_size) {
            for (std::size_t q : query_sizes) {
                ExperimentConfig c = *config;
                c.loop.function = f;
                c.loop.query_size = q;
                cells.push_back({c, cell_dir(experiment, c), {}, {}, kSuccess});
            }
        } else {
            for (auto d : {SelectionDirection::most_uncertain, SelectionDirection::least_uncertain}) {
                ExperimentConfig c = *config;
                c.loop.function = f;
                c.loop.direction = d;
                cells.push_back({c, cell_dir(experiment, c), {}, {}, kSuccess});
            }
        }
    }
    status = run_cells(cells, *splits, options.jobs, log, err);
    if (status != kSuccess) return status;

    std::vector<std::string> methods;
    for (auto f : functions) methods.emplace_back(to_string(f));
    std::ostringstream out;
    fs::path path;
    if (axis == AblationAxis::query_size) {
        std::vector<AblationEntry> entries;
        for (const auto& cell : cells) {
            const auto& last = cell.reports.back();
            entries.push_back({last.function, cell.config.loop.query_size, last.test_loss, last.test_accuracy});
        }
        summarize_ablation(entries, methods, query_sizes).write_csv(out);
        path = experiment / "ablation_query_size.csv";
    } else {
        out << "method,metric,most_uncertain,least_uncertain\n";
        for (std::size_t i = 0; i < functions.size(); ++i) {
            const auto& most = cells[2 * i].reports.back();
            const auto& least = cells[2 * i + 1].reports.back();
            out << methods[i] << ",loss," << fmt(most.test_loss) << ',' << fmt(least.test_loss) << '\n';
            out << methods[i] << ",accuracy," << fmt(most.test_accuracy) << ',' << fmt(least.test_accuracy) << '\n';
        }
        path = experiment / "ablation_direction.csv";
    }
    write_file(path, out.str());
    log << out.str() << "wrote " << path.string() << '\n';
    return kSuccess;
}

int cmd_report(const fs::path& run_dir, std::ostream& log, std::ostream& err) {
    if (!fs::is_directory(run_dir)) {
        err << "not a directory: " << run_dir.string() << '\n';
        return kRuntimeFailure;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (entry.is_regular_file() && entry.path().filename() == "reports.jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        err << "no reports.jsonl found under " << run_dir.string() << '\n';
        return kRuntimeFailure;
    }

    std::ostringstream series, confusion;
    series << "run,round,metric,value\n";
    confusion << "run,round,true,pred,count\n";
    int status = kSuccess;
    std::ostringstream table;
    table << std::left << std::setw(40) << "run" << std::setw(8) << "rounds" << std::setw(10) << "|D_T|"
          << std::setw(10) << "eval_acc" << std::setw(10) << "test_acc" << "recall\n";
    for (const auto& file : files) {
        const std::string run = fs::relative(file.parent_path(), run_dir).generic_string();
        std::vector<std::pair<std::size_t, std::string>> bad;
        std::vector<RoundReport> reports;
        try {
            reports = read_reports(file, &bad);
        } catch (const std::exception& e) {
            err << e.what() << '\n';
            status = kRuntimeFailure;
            continue;
        }
        for (const auto& [line, why] : bad) {
            err << file.string() << " line " << line << ": " << why << '\n';
            status = kRuntimeFailure;
        }
        const fs::path resolved = file.parent_path() / "config.resolved";
        if (fs::exists(resolved)) {
            try {
                const ExperimentConfig c = parse_config(read_file(resolved));
                const std::size_t expected = c.loop.function ? c.loop.rounds + 1 : 1;
                if (reports.size() < expected) {
                    log << "warning: " << run << " is partial (" << reports.size() << " of " << expected
                        << " rounds)\n";
                }
            } catch (const std::exception& e) {
                log << "warning: " << run << ": unreadable config.resolved (" << e.what() << ")\n";
            }
        }
        for (const auto& r : reports) {
            const std::pair<const char*, double> metrics[] = {
                {"labeled_size", static_cast<double>(r.labeled_size)},
                {"train_loss", r.train_loss},
                {"eval_loss", r.eval_loss},
                {"eval_accuracy", r.eval_accuracy},
                {"test_loss", r.test_loss},
                {"test_accuracy", r.test_accuracy},
                {"test_mc_accuracy", r.test_mc_accuracy}};
            for (const auto& [name, value] : metrics) {
                series << run << ',' << r.round << ',' << name << ',' << fmt(value, 10) << '\n';
            }
            for (std::size_t t = 0; t < r.confusion.num_classes(); ++t) {
                for (std::size_t p = 0; p < r.confusion.num_classes(); ++p) {
                    confusion << run << ',' << r.round << ',' << t << ',' << p << ',' << r.confusion.count(t, p)
                              << '\n';
                }
            }
        }
        if (!reports.empty()) {
            const auto& last = reports.back();
            std::string recall;
            for (double v : last.confusion.per_class_recall()) recall += (recall.empty() ? "" : "/") + fmt(v, 3);
            table << std::setw(40) << run << std::setw(8) << reports.size() << std::setw(10) << last.labeled_size
                  << std::setw(10) << fmt(last.eval_accuracy) << std::setw(10) << fmt(last.test_accuracy) << recall
                  << '\n';
        }
    }
    write_file(run_dir / "report_series.csv", series.str());
    write_file(run_dir / "report_confusion.csv", confusion.str());
    log << table.str();
    log << "wrote " << (run_dir / "report_series.csv").string() << " and "
        << (run_dir / "report_confusion.csv").string() << '\n';
    return status;
}

int cmd_synth(const SynthOptions& options, std::ostream& log, std::ostream& err) {
    ExperimentConfig config = default_config();
    if (options.config) {
        try {
            config = load_config(*options.config, options.seed.value_or(0));
        } catch (const ConfigFileError& e) {
            err << e.what() << '\n';
            return kConfigFailure;
        }
    }
    if (options.seed) config.loop.rng_seed = *options.seed;
    try {
        const SyntheticDataset data = generate_synthetic(synthetic_spec(config));
        const fs::path manifest = write_dataset(data, options.out);
        write_file(options.out / "config.resolved", render_config(config, options.seed || options.config));
        for (auto split : {Split::train, Split::eval, Split::test}) {
            const auto hist = data.manifest.histogram(split);
            log << to_string(split) << ':';
            for (std::size_t c = 0; c < hist.size(); ++c) log << ' ' << config.data.class_names.at(c) << '=' << hist[c];
            log << '\n';
        }
        log << "wrote " << manifest.string() << '\n';
    } catch (const ConfigError& e) {
        err << e.what() << '\n';
        return kConfigFailure;
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kRuntimeFailure;
    }
    return kSuccess;
}

int main(int argc, char** argv) {
    CLI::App app{"Deep Bayesian active learning with MC-dropout acquisition"};
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "Output root (default: [output] dir, $DBAL_OUTPUT_ROOT, ./runs)");
        sub->add_option("--seed", common.seed, "Override loop.rng_seed");
        sub->add_option("--jobs", common.jobs, "Parallel experiment cells")->check(CLI::PositiveNumber);
    };

    auto* run = app.add_subcommand("run", "Run one active-learning experiment");
    add_common(run);

    std::vector<std::string> compare_functions;
    auto* compare = app.add_subcommand("compare", "Run several acquisition functions side by side");
    add_common(compare);
    compare->add_option("--functions", compare_functions, "bald,max_entropy,mean_std,random,none")
        ->delimiter(',')
        ->required();

    std::string axis_name;
    std::vector<std::size_t> ablate_values;
    std::vector<std::string> ablate_functions{"bald", "max_entropy", "mean_std"};
    auto* ablate = app.add_subcommand("ablate", "Query-size or selection-direction ablation grid");
    add_common(ablate);
    ablate->add_option("--axis", axis_name, "query_size | direction")
        ->required()
        ->check(CLI::IsMember({"query_size", "direction"}));
    ablate->add_option("--values", ablate_values, "Query sizes (query_size axis)")->delimiter(',');
    ablate->add_option("--functions", ablate_functions, "Acquisition functions")->delimiter(',');

    fs::path report_dir;
    auto* report = app.add_subcommand("report", "Export plot-ready series from a run directory");
    report->add_option("dir", report_dir, "Run or experiment directory")->required();

    app.add_subcommand("defaults", "Print the default configuration");

    SynthOptions synth_options;
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with a manifest");
    synth->add_option("--out", synth_options.out, "Output directory")->required();
    synth->add_option("--config", synth_options.config, "Config whose [data] section drives generation");
    synth->add_option("--seed", synth_options.seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kSuccess : kConfigFailure;
    }

    try {
        if (*run) return cmd_run(common, std::cout, std::cerr);
        if (*compare) return cmd_compare(common, compare_functions, std::cout, std::cerr);
        if (*ablate) {
            const auto axis = axis_name == "direction" ? AblationAxis::direction : AblationAxis::query_size;
            if (axis == AblationAxis::query_size && ablate_values.empty()) {
                std::cerr << "--values is required for the query_size axis\n";
                return kConfigFailure;
            }
            return cmd_ablate(common, axis, ablate_values, ablate_functions, std::cout, std::cerr);
        }
        if (*report) return cmd_report(report_dir, std::cout, std::cerr);
        if (app.got_subcommand("defaults")) return cmd_defaults(std::cout);
        if (*synth) return cmd_synth(synth_options, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
    return kConfigFailure;
}

}  // namespace dbal::cli
