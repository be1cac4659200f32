#pragma once

// Pool-based active learning: seed set construction, per-round training,
// MC-dropout scoring of the pool, acquisition and bookkeeping.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbal/acquisition.hpp"
#include "dbal/adam.hpp"
#include "dbal/data.hpp"
#include "dbal/metrics.hpp"
#include "dbal/model.hpp"

namespace dbal {

/// Simulated labelling authority. Holds the labels of every pool example and
/// counts each read so tests can prove unacquired labels were never touched.
class Oracle {
public:
    Oracle() = default;
    explicit Oracle(std::map<std::string, int> hidden_labels);

    int reveal(const std::string& id);
    std::size_t reads(const std::string& id) const;
    std::size_t total_reads() const;
    bool knows(const std::string& id) const { return labels_.count(id) != 0; }
    std::size_t size() const { return labels_.size(); }

private:
    struct Entry {
        int label = 0;
        std::size_t reads = 0;
    };
    std::map<std::string, Entry> labels_;
};

struct LabeledEntry {
    std::string id;
    Tensor image;  // resized base image, [3,S,S] in [0,1]
    int label = 0;
};

struct PoolEntry {
    std::string id;
    Tensor image;
};

struct LabeledSet {
    std::vector<LabeledEntry> entries;
    std::size_t size() const { return entries.size(); }
};

struct UnlabeledPool {
    std::vector<PoolEntry> entries;
    std::size_t size() const { return entries.size(); }
};

struct SeedComposition {
    /// Explicit per-class counts (class index order); empty means stratified.
    std::vector<std::size_t> per_class;
    /// Total for the stratified mode (largest-remainder proportional rounding).
    std::size_t seed_size = 0;

    bool stratified() const { return per_class.empty(); }
};

struct SeedSplit {
    LabeledSet labeled;
    UnlabeledPool pool;
    Oracle oracle;
};

/// Draws the seed set without replacement; the remainder becomes the pool and
/// its labels move behind the oracle. Throws ConfigError listing per-class shortfalls.
SeedSplit build_seed_set(std::vector<Example> train, std::size_t num_classes,
                         const SeedComposition& composition, Rng& rng);

enum class RetrainMode { from_scratch, continue_training };

std::string_view to_string(RetrainMode m);
std::optional<RetrainMode> parse_retrain_mode(std::string_view name);

struct TrainingConfig {
    std::size_t epochs_per_round = 100;
    std::size_t batch_size = 8;
    AdamConfig adam;  // weight_decay is overwritten each round
    /// p and l^2 of the decay formula (1 - p) * l^2 / |D_T|.
    double decay_dropout_p = 0.5;
    double length_scale_sq = 0.5;
    RetrainMode retrain_mode = RetrainMode::from_scratch;
};

struct LoopConfig {
    ArchitectureConfig architecture;
    PreprocessConfig preprocess;  // stats are filled from the training split
    TrainingConfig training;
    SeedComposition seed{{20, 80}, 100};
    std::size_t query_size = 100;
    std::size_t rounds = 5;
    SelectionDirection direction = SelectionDirection::most_uncertain;
    /// nullopt: no acquisition at all (the no-uncertainty baseline, single round).
    std::optional<AcquisitionFunction> function = AcquisitionFunction::bald;
    std::size_t mc_passes = 20;
    std::size_t eval_batch_size = 64;
    std::uint64_t rng_seed = 0;

    std::size_t seed_size() const;
    /// Throws ConfigError naming the offending field.
    void validate() const;
};

std::string function_label(const std::optional<AcquisitionFunction>& f);

struct TrainResult {
    ModelState model;
    std::vector<double> epoch_losses;
    double train_accuracy = 0.0;  // deterministic pass over the labeled set
    double weight_decay = 0.0;    // the coefficient handed to Adam
    std::uint64_t adam_steps = 0;
};

/// Trains on the labeled set for `epochs_per_round` epochs of shuffled
/// mini-batches with dropout active. `initial` is used only in continue mode;
/// from_scratch rebuilds the model from (rng_seed, round).
TrainResult train_round(std::optional<ModelState> initial, const LabeledSet& labeled,
                        const LoopConfig& config, std::size_t round);

struct RoundReport {
    std::size_t round = 0;
    std::string function;
    std::string direction;
    std::uint64_t seed = 0;
    std::size_t labeled_size = 0;
    std::size_t pool_size = 0;
    double weight_decay = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double eval_loss = 0.0;
    double eval_accuracy = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    double test_mc_loss = 0.0;
    double test_mc_accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<std::string> acquired_ids;
    std::size_t requested = 0;
    bool shortfall = false;
    double elapsed_seconds = 0.0;  // kept out of reports.jsonl (not reproducible)
};

/// One evaluation split preprocessed once in eval mode.
struct EvalSplit {
    std::vector<std::string> ids;
    Tensor images;  // [N,3,S,S], standardized
    std::vector<int> labels;
    bool empty() const { return labels.empty(); }
};

struct LoopState {
    LabeledSet labeled;
    UnlabeledPool pool;
    Oracle oracle;
    std::optional<ModelState> model;
    std::size_t next_round = 0;
};

struct RoundContext {
    const LoopConfig& config;
    const EvalSplit& eval;
    const EvalSplit& test;
};

/// train -> evaluate -> MC on the pool -> score -> select -> reveal -> move.
/// Acquisition is skipped in the final round, without a function, or on an
/// empty pool. A pool smaller than k is taken whole and flagged.
RoundReport run_round(LoopState& state, const RoundContext& context);

struct ExperimentOutput {
    std::filesystem::path dir;  // reports.jsonl, summary.csv, timing.jsonl, checkpoints/
    bool resume = true;
    bool write_checkpoints = true;
};

/// Runs rounds 0..R. With an output directory every completed round is
/// persisted immediately and an interrupted run resumes after its last
/// completed round. Throws ConfigError on overlapping splits before training.
std::vector<RoundReport> run_experiment(const LoopConfig& config, const DatasetSplits& splits,
                                        const std::optional<ExperimentOutput>& output = {});

/// Stops the run after this many rounds (tests use it to simulate a crash).
struct CrashAfter {
    std::size_t rounds;
};
std::vector<RoundReport> run_experiment(const LoopConfig& config, const DatasetSplits& splits,
                                        const ExperimentOutput& output, CrashAfter crash);

// ---- report persistence ----------------------------------------------------

std::string report_to_json_line(const RoundReport& report);
RoundReport report_from_json_line(const std::string& line);
/// Reads reports.jsonl; malformed lines are returned as (line number, error).
std::vector<RoundReport> read_reports(const std::filesystem::path& path,
                                      std::vector<std::pair<std::size_t, std::string>>* bad = nullptr);
void write_summary_csv(std::ostream& out, const std::vector<RoundReport>& reports);

}  // namespace dbal
