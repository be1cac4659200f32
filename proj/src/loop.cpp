#include "dbal/loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "dbal/errors.hpp"
#include "json.hpp"

namespace dbal {
namespace {

using Json = nlohmann::ordered_json;

// Stream purposes for derive_rng({seed, round, purpose}).
enum Stream : std::uint64_t {
    kInitStream = 1,
    kTrainStream = 2,
    kAugmentStream = 3,
    kPoolMcStream = 4,
    kRandomScoreStream = 5,
    kTestMcStream = 6,
};
constexpr std::uint64_t kSeedSetKey = 0x5EED;

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

Tensor batch_of(const std::vector<Tensor>& images) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& img : images) ptrs.push_back(&img);
    return stack_images(ptrs);
}

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_from(const Json& j) { return j.is_null() ? nan_value() : j.get<double>(); }

std::string format_number(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

// ---- oracle ------------------------------------------------------------------

Oracle::Oracle(std::map<std::string, int> hidden_labels) {
    for (auto& [id, label] : hidden_labels) labels_[id] = Entry{label, 0};
}

int Oracle::reveal(const std::string& id) {
    auto it = labels_.find(id);
    if (it == labels_.end()) throw UsageError("oracle has no label for id '" + id + "'");
    it->second.reads += 1;
    return it->second.label;
}

std::size_t Oracle::reads(const std::string& id) const {
    auto it = labels_.find(id);
    return it == labels_.end() ? 0 : it->second.reads;
}

std::size_t Oracle::total_reads() const {
    std::size_t total = 0;
    for (const auto& [id, entry] : labels_) total += entry.reads;
    return total;
}

// ---- seed set ------------------------------------------------------------------

SeedSplit build_seed_set(std::vector<Example> train, std::size_t num_classes,
                         const SeedComposition& composition, Rng& rng) {
    std::vector<std::size_t> available(num_classes, 0);
    for (const auto& ex : train) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_classes) {
            throw ConfigError("example '" + ex.id + "' has label " + std::to_string(ex.label) +
                              " outside " + std::to_string(num_classes) + " classes");
        }
        available[static_cast<std::size_t>(ex.label)] += 1;
    }
    std::vector<std::size_t> wanted = composition.per_class;
    if (composition.stratified()) {
        if (composition.seed_size > train.size()) {
            throw ConfigError("seed set of " + std::to_string(composition.seed_size) +
                              " exceeds the " + std::to_string(train.size()) + " training examples");
        }
        if (composition.seed_size > 0) {
            std::vector<double> ratios(available.begin(), available.end());
            wanted = proportional_counts(composition.seed_size, ratios);
        } else {
            wanted.assign(num_classes, 0);
        }
    }
    if (wanted.size() != num_classes) {
        throw ConfigError("seed composition lists " + std::to_string(wanted.size()) +
                          " classes, dataset has " + std::to_string(num_classes));
    }
    std::vector<std::string> shortfalls;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (wanted[c] > available[c]) {
            shortfalls.push_back("class " + std::to_string(c) + ": wanted " +
                                 std::to_string(wanted[c]) + ", have " + std::to_string(available[c]));
        }
    }
    if (!shortfalls.empty()) {
        std::string msg = "insufficient examples for the seed set:";
        for (const auto& s : shortfalls) msg += "\n  " + s;
        throw ConfigError(msg);
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    std::vector<bool> in_seed(train.size(), false);
    std::vector<std::size_t> taken(num_classes, 0);
    for (std::size_t i : order) {
        const auto c = static_cast<std::size_t>(train[i].label);
        if (taken[c] < wanted[c]) {
            in_seed[i] = true;
            taken[c] += 1;
        }
    }

    SeedSplit split;
    std::map<std::string, int> hidden;
    // seed entries keep the shuffled draw order; the pool keeps dataset order
    for (std::size_t i : order) {
        if (in_seed[i]) split.labeled.entries.push_back({train[i].id, std::move(train[i].image), train[i].label});
    }
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (in_seed[i]) continue;
        hidden[train[i].id] = train[i].label;
        split.pool.entries.push_back({train[i].id, std::move(train[i].image)});
    }
    split.oracle = Oracle(std::move(hidden));
    return split;
}

// ---- configuration ----------------------------------------------------------------

std::string_view to_string(RetrainMode m) {
    return m == RetrainMode::from_scratch ? "from_scratch" : "continue";
}

std::optional<RetrainMode> parse_retrain_mode(std::string_view name) {
    if (name == "from_scratch") return RetrainMode::from_scratch;
    if (name == "continue") return RetrainMode::continue_training;
    return std::nullopt;
}

std::string function_label(const std::optional<AcquisitionFunction>& f) {
    return f ? std::string(to_string(*f)) : std::string("none");
}

std::size_t LoopConfig::seed_size() const {
    if (seed.stratified()) return seed.seed_size;
    return std::accumulate(seed.per_class.begin(), seed.per_class.end(), std::size_t{0});
}

void LoopConfig::validate() const {
    architecture.validate();
    preprocess.validate();
    if (preprocess.target_size != architecture.image_size) {
        throw ConfigError("preprocess target_size " + std::to_string(preprocess.target_size) +
                          " must equal model image_size " + std::to_string(architecture.image_size));
    }
    if (training.batch_size == 0) throw ConfigError("training.batch_size must be at least 1");
    if (training.epochs_per_round == 0) throw ConfigError("training.epochs_per_round must be at least 1");
    if (!(training.adam.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
    if (!(training.decay_dropout_p >= 0.0 && training.decay_dropout_p < 1.0)) {
        throw ConfigError("training.decay_dropout_p must lie in [0, 1)");
    }
    if (training.length_scale_sq < 0.0) throw ConfigError("training.length_scale_sq must be >= 0");
    if (!seed.stratified() && seed.per_class.size() != architecture.num_classes) {
        throw ConfigError("loop.seed_composition lists " + std::to_string(seed.per_class.size()) +
                          " classes, model has " + std::to_string(architecture.num_classes));
    }
    if (seed_size() < training.batch_size) {
        throw ConfigError("loop.seed_size " + std::to_string(seed_size()) +
                          " must be at least training.batch_size " +
                          std::to_string(training.batch_size));
    }
    if (query_size == 0) throw ConfigError("loop.query_size must be at least 1");
    if (mc_passes == 0) throw ConfigError("acquisition.mc_passes must be at least 1");
    if (eval_batch_size == 0) throw ConfigError("eval batch size must be at least 1");
}

// ---- training ------------------------------------------------------------------------

TrainResult train_round(std::optional<ModelState> initial, const LabeledSet& labeled,
                        const LoopConfig& config, std::size_t round) {
    if (labeled.size() == 0) throw ConfigError("cannot train on an empty labeled set");
    const auto& tc = config.training;
    const std::uint64_t seed = config.rng_seed;

    TrainResult result;
    if (tc.retrain_mode == RetrainMode::continue_training && initial) {
        result.model = std::move(*initial);
    } else {
        Rng init = derive_rng({seed, round, kInitStream});
        result.model = build_model(config.architecture, init);
    }

    AdamConfig adam = tc.adam;
    adam.weight_decay = weight_decay_coefficient(tc.decay_dropout_p, tc.length_scale_sq, labeled.size());
    AdamState state = make_adam_state(result.model.parameters, adam);
    result.weight_decay = state.config.weight_decay;

    const PreprocessConfig& pre = config.preprocess;
    const bool augment = pre.crop_fraction < 1.0 || pre.flip_probability > 0.0;
    std::vector<Tensor> fixed;
    if (!augment) {
        Rng unused(0);
        for (const auto& e : labeled.entries) {
            fixed.push_back(preprocess(e.image, pre, PreprocessMode::eval, unused));
        }
    }

    Rng train_rng = derive_rng({seed, round, kTrainStream});
    std::vector<std::size_t> order(labeled.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t classes = config.architecture.num_classes;

    for (std::size_t epoch = 0; epoch < tc.epochs_per_round; ++epoch) {
        shuffle(order, train_rng);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
            const std::size_t end = std::min(order.size(), begin + tc.batch_size);
            std::vector<Tensor> images;
            std::vector<int> labels;
            for (std::size_t j = begin; j < end; ++j) {
                const auto& e = labeled.entries[order[j]];
                if (augment) {
                    Rng aug = derive_rng({seed, round, epoch, fnv1a(e.id), kAugmentStream});
                    images.push_back(preprocess(e.image, pre, PreprocessMode::train, aug));
                } else {
                    images.push_back(fixed[order[j]]);
                }
                labels.push_back(e.label);
            }
            const Tensor targets = one_hot(labels, classes);
            const ForwardCache cache = forward_train(result.model, batch_of(images), &train_rng);
            loss_sum += cross_entropy_loss(cache.probs, targets) * static_cast<double>(labels.size());
            const Gradients grads = backward(result.model, cache, softmax_cross_entropy_grad(cache.probs, targets));
            adam_step(result.model.parameters, grads, state);
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(labeled.size()));
    }
    result.adam_steps = state.step_count;

    std::vector<Tensor> eval_images;
    std::vector<int> labels;
    Rng unused(0);
    for (const auto& e : labeled.entries) {
        eval_images.push_back(preprocess(e.image, pre, PreprocessMode::eval, unused));
        labels.push_back(e.label);
    }
    result.train_accuracy =
        evaluate(result.model, batch_of(eval_images), labels, config.eval_batch_size).accuracy;
    return result;
}

// ---- rounds ------------------------------------------------------------------------------

RoundReport run_round(LoopState& state, const RoundContext& context) {
    const auto started = std::chrono::steady_clock::now();
    const LoopConfig& config = context.config;
    const std::size_t round = state.next_round;
    const std::uint64_t seed = config.rng_seed;

    RoundReport report;
    report.round = round;
    report.function = function_label(config.function);
    report.direction = std::string(to_string(config.direction));
    report.seed = seed;
    report.labeled_size = state.labeled.size();
    report.pool_size = state.pool.size();
    report.confusion = ConfusionMatrix(config.architecture.num_classes);

    TrainResult trained = train_round(state.model, state.labeled, config, round);
    state.model = std::move(trained.model);
    report.weight_decay = trained.weight_decay;
    report.train_loss = trained.epoch_losses.empty() ? nan_value() : trained.epoch_losses.back();
    report.train_accuracy = trained.train_accuracy;

    const ModelState& model = *state.model;
    report.eval_loss = report.eval_accuracy = nan_value();
    report.test_loss = report.test_accuracy = nan_value();
    report.test_mc_loss = report.test_mc_accuracy = nan_value();
    if (!context.eval.empty()) {
        const EvalResult r = evaluate(model, context.eval.images, context.eval.labels, config.eval_batch_size);
        report.eval_loss = r.loss;
        report.eval_accuracy = r.accuracy;
    }
    if (!context.test.empty()) {
        const EvalResult r = evaluate(model, context.test.images, context.test.labels, config.eval_batch_size);
        report.test_loss = r.loss;
        report.test_accuracy = r.accuracy;
        report.confusion = r.confusion;
        Rng mc_rng = derive_rng({seed, round, kTestMcStream});
        const PredictiveSamples samples =
            mc_predict(model, context.test.images, context.test.ids, config.mc_passes, mc_rng);
        const EvalResult mc = evaluate_probs(consensus_probs(samples), context.test.labels);
        report.test_mc_loss = mc.loss;
        report.test_mc_accuracy = mc.accuracy;
    }

    const bool acquire = config.function.has_value() && round < config.rounds && state.pool.size() > 0;
    if (acquire) {
        report.requested = config.query_size;
        const std::size_t k = std::min(config.query_size, state.pool.size());
        report.shortfall = k < config.query_size;

        std::vector<std::string> ids;
        ids.reserve(state.pool.size());
        for (const auto& e : state.pool.entries) ids.push_back(e.id);

        AcquisitionScores scores;
        if (*config.function == AcquisitionFunction::random) {
            Rng score_rng = derive_rng({seed, round, kRandomScoreStream});
            scores = score_random(ids, score_rng);
        } else {
            std::vector<Tensor> images;
            Rng unused(0);
            for (const auto& e : state.pool.entries) {
                images.push_back(preprocess(e.image, config.preprocess, PreprocessMode::eval, unused));
            }
            Rng mc_rng = derive_rng({seed, round, kPoolMcStream});
            const PredictiveSamples samples = mc_predict(model, batch_of(images), ids, config.mc_passes, mc_rng);
            Rng unused_scores(0);
            scores = score(*config.function, samples, unused_scores);
        }
        report.acquired_ids = select_top_k(scores, {k, config.direction});

        const std::set<std::string> chosen(report.acquired_ids.begin(), report.acquired_ids.end());
        std::map<std::string, Tensor> moved;
        std::vector<PoolEntry> remaining;
        remaining.reserve(state.pool.size() - k);
        for (auto& e : state.pool.entries) {
            if (chosen.count(e.id)) {
                moved.emplace(e.id, std::move(e.image));
            } else {
                remaining.push_back(std::move(e));
            }
        }
        state.pool.entries = std::move(remaining);
        for (const auto& id : report.acquired_ids) {
            const int label = state.oracle.reveal(id);
            state.labeled.entries.push_back({id, std::move(moved.at(id)), label});
        }
    }

    state.next_round = round + 1;
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

// ---- experiments ---------------------------------------------------------------------------

namespace {

void check_disjoint(const DatasetSplits& splits) {
    std::map<std::string, std::string> owner;
    std::vector<std::string> clashes;
    const std::pair<const char*, const std::vector<Example>*> all[] = {
        {"train", &splits.train}, {"eval", &splits.eval}, {"test", &splits.test}};
    for (const auto& [name, examples] : all) {
        for (const auto& ex : *examples) {
            auto [it, inserted] = owner.emplace(ex.id, name);
            if (!inserted) clashes.push_back("'" + ex.id + "' in " + it->second + " and " + name);
        }
    }
    if (!clashes.empty()) {
        std::string msg = "dataset splits overlap (" + std::to_string(clashes.size()) + " ids):";
        for (std::size_t i = 0; i < std::min<std::size_t>(clashes.size(), 20); ++i) msg += "\n  " + clashes[i];
        throw ConfigError(msg);
    }
}

EvalSplit make_eval_split(const std::vector<Example>& examples, const PreprocessConfig& pre) {
    EvalSplit split;
    if (examples.empty()) return split;
    std::vector<Tensor> images;
    Rng unused(0);
    for (const auto& ex : examples) {
        split.ids.push_back(ex.id);
        split.labels.push_back(ex.label);
        images.push_back(preprocess(ex.image, pre, PreprocessMode::eval, unused));
    }
    split.images = batch_of(images);
    return split;
}

std::vector<Example> resized_copy(const std::vector<Example>& examples, std::size_t size) {
    std::vector<Example> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back({ex.id, resize_bilinear(ex.image, size, size), ex.label});
    return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw LoadError("cannot write " + tmp);
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

std::vector<RoundReport> run_experiment_impl(const LoopConfig& config_in, const DatasetSplits& splits,
                                             const std::optional<ExperimentOutput>& output,
                                             std::optional<std::size_t> crash_after) {
    config_in.validate();
    check_disjoint(splits);
    if (splits.train.empty()) throw ConfigError("training split is empty");
    if (splits.num_classes != config_in.architecture.num_classes) {
        throw ConfigError("dataset has " + std::to_string(splits.num_classes) + " classes, model expects " +
                          std::to_string(config_in.architecture.num_classes));
    }

    LoopConfig config = config_in;
    const std::size_t size = config.architecture.image_size;
    std::vector<Example> train = resized_copy(splits.train, size);
    {
        std::vector<Tensor> base;
        base.reserve(train.size());
        for (const auto& ex : train) base.push_back(ex.image);
        config.preprocess.stats = compute_norm_stats(base);
    }
    const EvalSplit eval = make_eval_split(splits.eval, config.preprocess);
    const EvalSplit test = make_eval_split(splits.test, config.preprocess);

    Rng seed_rng = derive_rng({config.rng_seed, kSeedSetKey});
    SeedSplit seeded = build_seed_set(std::move(train), splits.num_classes, config.seed, seed_rng);
    LoopState state{std::move(seeded.labeled), std::move(seeded.pool), std::move(seeded.oracle), std::nullopt, 0};
    const std::size_t last_round = config.function ? config.rounds : 0;

    std::vector<RoundReport> reports;
    std::filesystem::path dir;
    if (output) {
        dir = output->dir;
        std::filesystem::create_directories(dir);
        if (output->write_checkpoints) std::filesystem::create_directories(dir / "checkpoints");
        const auto reports_path = dir / "reports.jsonl";
        if (output->resume && std::filesystem::exists(reports_path)) {
            std::vector<std::pair<std::size_t, std::string>> bad;
            auto previous = read_reports(reports_path, &bad);
            // keep the longest valid prefix; a crash can leave a partial last line
            std::size_t keep = 0;
            while (keep < previous.size() && previous[keep].round == keep && keep <= last_round) ++keep;
            previous.resize(keep);
            const bool needs_model = config.training.retrain_mode == RetrainMode::continue_training && keep > 0;
            const auto ckpt = dir / "checkpoints" / ("round_" + std::to_string(keep - 1) + ".ckpt");
            if (needs_model && !std::filesystem::exists(ckpt)) previous.clear();
            for (const auto& r : previous) {
                std::set<std::string> chosen(r.acquired_ids.begin(), r.acquired_ids.end());
                std::map<std::string, Tensor> moved;
                std::vector<PoolEntry> remaining;
                for (auto& e : state.pool.entries) {
                    if (chosen.count(e.id)) moved.emplace(e.id, std::move(e.image));
                    else remaining.push_back(std::move(e));
                }
                if (moved.size() != chosen.size()) {
                    throw LoadError("cannot resume " + reports_path.string() + ": round " +
                                    std::to_string(r.round) + " acquired ids not in the pool");
                }
                state.pool.entries = std::move(remaining);
                for (const auto& id : r.acquired_ids) {
                    state.labeled.entries.push_back({id, std::move(moved.at(id)), state.oracle.reveal(id)});
                }
            }
            if (!previous.empty() && needs_model) state.model = load_checkpoint(ckpt);
            state.next_round = previous.size();
            reports = std::move(previous);
            std::string text;
            for (const auto& r : reports) text += report_to_json_line(r) + "\n";
            write_text_atomic(reports_path, text);
        } else {
            write_text_atomic(reports_path, "");
            write_text_atomic(dir / "timing.jsonl", "");
        }
    }

    const RoundContext context{config, eval, test};
    std::size_t completed_now = 0;
    while (state.next_round <= last_round) {
        if (crash_after && completed_now >= *crash_after) break;
        RoundReport report = run_round(state, context);
        ++completed_now;
        if (output) {
            {
                std::ofstream out(dir / "reports.jsonl", std::ios::app | std::ios::binary);
                out << report_to_json_line(report) << '\n';
            }
            {
                std::ofstream out(dir / "timing.jsonl", std::ios::app | std::ios::binary);
                Json t;
                t["round"] = report.round;
                t["elapsed_seconds"] = report.elapsed_seconds;
                out << t.dump() << '\n';
            }
            if (output->write_checkpoints) {
                save_checkpoint(dir / "checkpoints" / ("round_" + std::to_string(report.round) + ".ckpt"),
                                *state.model);
            }
        }
        reports.push_back(std::move(report));
        if (output) {
            std::ostringstream summary;
            write_summary_csv(summary, reports);
            write_text_atomic(dir / "summary.csv", summary.str());
        }
    }
    return reports;
}

}  // namespace

std::vector<RoundReport> run_experiment(const LoopConfig& config, const DatasetSplits& splits,
                                        const std::optional<ExperimentOutput>& output) {
    return run_experiment_impl(config, splits, output, std::nullopt);
}

std::vector<RoundReport> run_experiment(const LoopConfig& config, const DatasetSplits& splits,
                                        const ExperimentOutput& output, CrashAfter crash) {
    return run_experiment_impl(config, splits, output, crash.rounds);
}

// ---- persistence ----------------------------------------------------------------------------

std::string report_to_json_line(const RoundReport& r) {
    Json j;
    j["round"] = r.round;
    j["function"] = r.function;
    j["direction"] = r.direction;
    j["seed"] = r.seed;
    j["labeled_size"] = r.labeled_size;
    j["pool_size"] = r.pool_size;
    j["weight_decay"] = r.weight_decay;
    j["train_loss"] = number_or_null(r.train_loss);
    j["train_accuracy"] = number_or_null(r.train_accuracy);
    j["eval_loss"] = number_or_null(r.eval_loss);
    j["eval_accuracy"] = number_or_null(r.eval_accuracy);
    j["test_loss"] = number_or_null(r.test_loss);
    j["test_accuracy"] = number_or_null(r.test_accuracy);
    j["test_mc_loss"] = number_or_null(r.test_mc_loss);
    j["test_mc_accuracy"] = number_or_null(r.test_mc_accuracy);
    Json matrix = Json::array();
    for (std::size_t t = 0; t < r.confusion.num_classes(); ++t) {
        Json row = Json::array();
        for (std::size_t p = 0; p < r.confusion.num_classes(); ++p) row.push_back(r.confusion.count(t, p));
        matrix.push_back(std::move(row));
    }
    j["confusion"] = std::move(matrix);
    Json recall = Json::array();
    for (double v : r.confusion.per_class_recall()) recall.push_back(number_or_null(v));
    j["per_class_recall"] = std::move(recall);
    j["requested"] = r.requested;
    j["acquired"] = r.acquired_ids;
    j["shortfall"] = r.shortfall;
    return j.dump();
}

RoundReport report_from_json_line(const std::string& line) {
    RoundReport r;
    try {
        const Json j = Json::parse(line);
        r.round = j.at("round").get<std::size_t>();
        r.function = j.at("function").get<std::string>();
        r.direction = j.at("direction").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.labeled_size = j.at("labeled_size").get<std::size_t>();
        r.pool_size = j.at("pool_size").get<std::size_t>();
        r.weight_decay = j.at("weight_decay").get<double>();
        r.train_loss = number_from(j.at("train_loss"));
        r.train_accuracy = number_from(j.at("train_accuracy"));
        r.eval_loss = number_from(j.at("eval_loss"));
        r.eval_accuracy = number_from(j.at("eval_accuracy"));
        r.test_loss = number_from(j.at("test_loss"));
        r.test_accuracy = number_from(j.at("test_accuracy"));
        r.test_mc_loss = number_from(j.at("test_mc_loss"));
        r.test_mc_accuracy = number_from(j.at("test_mc_accuracy"));
        const auto& matrix = j.at("confusion");
        r.confusion = ConfusionMatrix(matrix.size());
        for (std::size_t t = 0; t < matrix.size(); ++t) {
            if (matrix[t].size() != matrix.size()) throw LoadError("confusion matrix is not square");
            for (std::size_t p = 0; p < matrix.size(); ++p) {
                r.confusion.add(static_cast<int>(t), static_cast<int>(p), matrix[t][p].get<std::uint64_t>());
            }
        }
        r.requested = j.at("requested").get<std::size_t>();
        r.acquired_ids = j.at("acquired").get<std::vector<std::string>>();
        r.shortfall = j.at("shortfall").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::vector<RoundReport> read_reports(const std::filesystem::path& path,
                                      std::vector<std::pair<std::size_t, std::string>>* bad) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open reports " + path.string());
    std::vector<RoundReport> reports;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            reports.push_back(report_from_json_line(line));
        } catch (const LoadError& e) {
            if (!bad) throw LoadError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
            bad->emplace_back(line_no, e.what());
        }
    }
    return reports;
}

void write_summary_csv(std::ostream& out, const std::vector<RoundReport>& reports) {
    out << "round,function,direction,labeled_size,pool_size,weight_decay,train_loss,train_accuracy,"
           "eval_loss,eval_accuracy,test_loss,test_accuracy,test_mc_loss,test_mc_accuracy,acquired,shortfall";
    const std::size_t classes = reports.empty() ? 0 : reports.front().confusion.num_classes();
    for (std::size_t c = 0; c < classes; ++c) out << ",test_recall_" << c;
    out << '\n';
    for (const auto& r : reports) {
        out << r.round << ',' << r.function << ',' << r.direction << ',' << r.labeled_size << ','
            << r.pool_size << ',' << format_number(r.weight_decay) << ',' << format_number(r.train_loss) << ','
            << format_number(r.train_accuracy) << ',' << format_number(r.eval_loss) << ','
            << format_number(r.eval_accuracy) << ',' << format_number(r.test_loss) << ','
            << format_number(r.test_accuracy) << ',' << format_number(r.test_mc_loss) << ','
            << format_number(r.test_mc_accuracy) << ',' << r.acquired_ids.size() << ','
            << (r.shortfall ? "true" : "false");
        const std::vector<double> recall = r.confusion.per_class_recall();
        for (std::size_t c = 0; c < classes; ++c) out << ',' << format_number(c < recall.size() ? recall[c] : std::numeric_limits<double>::quiet_NaN());
        out << '\n';
    }
}

}  // namespace dbal
