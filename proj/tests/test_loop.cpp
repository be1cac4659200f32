#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dbal/errors.hpp"
#include "dbal/loop.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace dbal;
namespace fs = std::filesystem;

namespace {

std::vector<Example> labelled_examples(std::size_t negatives, std::size_t positives, std::mt19937_64& gen) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < negatives + positives; ++i) {
        out.push_back({"t" + std::to_string(i), oracle::random_tensor({3, 8, 8}, gen, 0, 1), i < negatives ? 0 : 1});
    }
    return out;
}

DatasetSplits tiny_splits(std::size_t train, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    DatasetSplits s;
    s.train = scenarios::random_examples(train, 2, gen, "tr");
    s.eval = scenarios::random_examples(10, 2, gen, "ev");
    s.test = scenarios::random_examples(12, 2, gen, "te");
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_SUITE("seed-set") {
    TEST_CASE("20/80 composition on a 700-example split") {
        std::mt19937_64 gen(1);
        Rng rng(2);
        SeedSplit s = build_seed_set(labelled_examples(560, 140, gen), 2, {{20, 80}, 100}, rng);
        CHECK(s.labeled.size() == 100);
        CHECK(s.pool.size() == 600);
        std::size_t positives = 0;
        for (const auto& e : s.labeled.entries) positives += e.label;
        CHECK(positives == 80);
        std::set<std::string> ids;
        for (const auto& e : s.labeled.entries) ids.insert(e.id);
        for (const auto& e : s.pool.entries) {
            CHECK(ids.count(e.id) == 0);
            CHECK(s.oracle.knows(e.id));
        }
        CHECK(s.oracle.size() == 600);
        CHECK(s.oracle.total_reads() == 0);
    }

    TEST_CASE("stratified composition rounds proportionally") {
        std::mt19937_64 gen(3);
        Rng rng(4);
        SeedSplit s = build_seed_set(labelled_examples(300, 100, gen), 2, {{}, 100}, rng);
        std::size_t positives = 0;
        for (const auto& e : s.labeled.entries) positives += e.label;
        CHECK(s.labeled.size() == 100);
        CHECK(positives == 25);
    }

    TEST_CASE("empty seed leaves the full pool") {
        std::mt19937_64 gen(5);
        Rng rng(6);
        SeedSplit s = build_seed_set(labelled_examples(10, 10, gen), 2, {{}, 0}, rng);
        CHECK(s.labeled.size() == 0);
        CHECK(s.pool.size() == 20);
    }

    TEST_CASE("shortfall is reported per class") {
        std::mt19937_64 gen(7);
        Rng rng(8);
        try {
            build_seed_set(labelled_examples(30, 5, gen), 2, {{20, 10}, 30}, rng);
            FAIL("expected a ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("class 1") != std::string::npos);
            CHECK(msg.find("10") != std::string::npos);
            CHECK(msg.find("class 0") == std::string::npos);
        }
    }

    TEST_CASE("same seed, same seed set") {
        std::mt19937_64 g1(9), g2(9);
        Rng a(10), b(10);
        const auto s1 = build_seed_set(labelled_examples(50, 50, g1), 2, {{5, 5}, 10}, a);
        const auto s2 = build_seed_set(labelled_examples(50, 50, g2), 2, {{5, 5}, 10}, b);
        for (std::size_t i = 0; i < 10; ++i) CHECK(s1.labeled.entries[i].id == s2.labeled.entries[i].id);
    }
}

TEST_SUITE("oracle") {
    TEST_CASE("reads are counted per id") {
        Oracle o({{"a", 1}, {"b", 0}});
        CHECK(o.reveal("a") == 1);
        CHECK(o.reveal("a") == 1);
        CHECK(o.reads("a") == 2);
        CHECK(o.reads("b") == 0);
        CHECK(o.total_reads() == 2);
        CHECK_THROWS(o.reveal("zzz"));
    }
}

TEST_SUITE("training") {
    TEST_CASE("decay coefficient follows the labeled-set size") {
        std::mt19937_64 gen(11);
        LoopConfig cfg = scenarios::tiny_loop_config();
        for (std::size_t n : {100u, 600u}) {
            LabeledSet labeled;
            for (const auto& e : scenarios::random_examples(n, 2, gen)) labeled.entries.push_back({e.id, e.image, e.label});
            const TrainResult r = train_round(std::nullopt, labeled, cfg, 0);
            CHECK(r.weight_decay == (1.0 - 0.5) * 0.5 / static_cast<double>(n));
            CHECK(r.adam_steps == (n + 1) / 2);
        }
        CHECK(weight_decay_coefficient(0.5, 0.5, 100) == 0.0025);
    }

    TEST_CASE("empty labeled set is an error") {
        CHECK_THROWS_AS(train_round(std::nullopt, LabeledSet{}, scenarios::tiny_loop_config(), 0), ConfigError);
    }

    TEST_CASE("separable synthetic data is learned") {
        SyntheticSpec spec;
        spec.image_size = 16;
        spec.difficulty = 0.0;
        spec.train_counts = {100, 100};
        spec.eval_counts = {0, 0};
        spec.test_counts = {0, 0};
        spec.seed = 5;
        const auto data = generate_synthetic(spec);
        LoopConfig cfg;
        cfg.architecture.image_size = 16;
        cfg.preprocess.target_size = 16;
        cfg.training.epochs_per_round = 30;
        cfg.rng_seed = 3;
        std::vector<Tensor> images;
        LabeledSet labeled;
        for (const auto& e : data.splits.train) {
            labeled.entries.push_back({e.id, e.image, e.label});
            images.push_back(e.image);
        }
        cfg.preprocess.stats = compute_norm_stats(images);
        const TrainResult r = train_round(std::nullopt, labeled, cfg, 0);
        CHECK(r.train_accuracy >= 0.95);
        CHECK(r.epoch_losses.size() == 30);
        CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    }

    TEST_CASE("continue mode starts from the given model") {
        std::mt19937_64 gen(12);
        LoopConfig cfg = scenarios::tiny_loop_config();
        LabeledSet labeled;
        for (const auto& e : scenarios::random_examples(10, 2, gen)) labeled.entries.push_back({e.id, e.image, e.label});
        const TrainResult first = train_round(std::nullopt, labeled, cfg, 0);
        const TrainResult scratch = train_round(first.model, labeled, cfg, 1);
        cfg.training.retrain_mode = RetrainMode::continue_training;
        const TrainResult resumed = train_round(first.model, labeled, cfg, 1);
        CHECK_FALSE(scratch.model == resumed.model);
        cfg.training.epochs_per_round = 0;
        CHECK(train_round(first.model, labeled, cfg, 1).model == first.model);
    }
}

TEST_SUITE("loop") {
    TEST_CASE("full protocol arithmetic") {
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{20, 80}, 100};
        cfg.query_size = 100;
        cfg.rounds = 5;
        std::mt19937_64 gen(13);
        DatasetSplits splits;
        splits.train = labelled_examples(560, 140, gen);
        splits.test = scenarios::random_examples(20, 2, gen, "te");
        const auto reports = run_experiment(cfg, splits);
        REQUIRE(reports.size() == 6);
        for (std::size_t r = 0; r < 6; ++r) {
            CHECK(reports[r].labeled_size == 100 * (r + 1));
            CHECK(reports[r].pool_size == 600 - 100 * r);
            CHECK(reports[r].weight_decay == 0.25 / static_cast<double>(100 * (r + 1)));
            CHECK(reports[r].confusion.total() == 20);
        }
        CHECK(reports.back().acquired_ids.empty());
        CHECK(reports.back().pool_size == 100);
    }

    TEST_CASE("pool shortfall clamps and flags") {
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{}, 10};
        cfg.query_size = 100;
        cfg.rounds = 2;
        const auto reports = run_experiment(cfg, tiny_splits(60, 14));
        REQUIRE(reports.size() == 3);
        CHECK(reports[0].acquired_ids.size() == 50);
        CHECK(reports[0].shortfall);
        CHECK(reports[1].pool_size == 0);
        CHECK(reports[1].acquired_ids.empty());
        CHECK(reports[2].labeled_size == 60);
    }

    TEST_CASE("no acquisition function means a single round") {
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{}, 10};
        cfg.function = std::nullopt;
        const auto reports = run_experiment(cfg, tiny_splits(30, 15));
        REQUIRE(reports.size() == 1);
        CHECK(reports[0].function == "none");
        CHECK(reports[0].acquired_ids.empty());
        cfg.function = AcquisitionFunction::bald;
        cfg.rounds = 0;
        CHECK(run_experiment(cfg, tiny_splits(30, 15)).size() == 1);
    }

    TEST_CASE("same seed, same acquisitions") {
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{}, 10};
        cfg.query_size = 5;
        cfg.rounds = 3;
        const auto a = run_experiment(cfg, tiny_splits(50, 16));
        const auto b = run_experiment(cfg, tiny_splits(50, 16));
        for (std::size_t r = 0; r < a.size(); ++r) {
            CHECK(a[r].acquired_ids == b[r].acquired_ids);
            CHECK(report_to_json_line(a[r]) == report_to_json_line(b[r]));
        }
    }

    TEST_CASE("least-uncertain takes the bottom of the most-uncertain ranking") {
        // random scores are distinct, so the ranking has no ties to break by id
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.function = AcquisitionFunction::random;
        cfg.seed = {{}, 10};
        cfg.rounds = 1;
        const DatasetSplits splits = tiny_splits(40, 17);
        cfg.query_size = 30;
        const auto ranking = run_experiment(cfg, splits)[0].acquired_ids;  // the whole pool, best first
        cfg.query_size = 7;
        cfg.direction = SelectionDirection::least_uncertain;
        const auto least = run_experiment(cfg, splits)[0].acquired_ids;
        CHECK(std::set<std::string>(least.begin(), least.end()) ==
              std::set<std::string>(ranking.end() - 7, ranking.end()));
        CHECK(least.front() == ranking.back());
    }

    TEST_CASE("randomized scenarios conserve examples and never peek at labels") {
        std::mt19937_64 gen(2024);
        for (int i = 0; i < 40; ++i) {
            CAPTURE(i);
            CHECK(scenarios::run_scenario(gen) == "");
        }
    }

    TEST_CASE("overlapping splits fail before training") {
        DatasetSplits splits = tiny_splits(30, 18);
        splits.test.push_back(splits.train.front());
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{}, 10};
        try {
            run_experiment(cfg, splits);
            FAIL("expected a ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(splits.train.front().id) != std::string::npos);
        }
    }

    TEST_CASE("config validation") {
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{}, 1};
        cfg.training.batch_size = 8;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = scenarios::tiny_loop_config();
        cfg.query_size = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_SUITE("persistence") {
    TEST_CASE("interrupted runs resume to the same result") {
        LoopConfig cfg = scenarios::tiny_loop_config();
        cfg.seed = {{}, 10};
        cfg.query_size = 4;
        cfg.rounds = 4;
        const DatasetSplits splits = tiny_splits(40, 19);
        const auto whole = oracle::temp_dir("resume_whole"), broken = oracle::temp_dir("resume_broken");
        const auto full = run_experiment(cfg, splits, ExperimentOutput{whole, true, true});
        const auto partial = run_experiment(cfg, splits, ExperimentOutput{broken, true, true}, CrashAfter{2});
        CHECK(partial.size() == 2);
        CHECK(read_reports(broken / "reports.jsonl").size() == 2);
        const auto resumed = run_experiment(cfg, splits, ExperimentOutput{broken, true, true});
        CHECK(resumed.size() == full.size());
        CHECK(slurp(broken / "reports.jsonl") == slurp(whole / "reports.jsonl"));
        CHECK(slurp(broken / "summary.csv") == slurp(whole / "summary.csv"));
        CHECK(fs::exists(whole / "checkpoints" / "round_4.ckpt"));
    }

    TEST_CASE("report lines round-trip") {
        RoundReport r;
        r.round = 2;
        r.function = "bald";
        r.direction = "most_uncertain";
        r.seed = 99;
        r.labeled_size = 300;
        r.pool_size = 400;
        r.weight_decay = 0.25 / 300;
        r.train_loss = 0.1;
        r.eval_accuracy = 0.75;
        r.test_loss = std::nan("");
        r.confusion = ConfusionMatrix(2);
        r.confusion.add(1, 0, 7);
        r.acquired_ids = {"a", "b"};
        r.requested = 50;
        r.shortfall = true;
        const std::string line = report_to_json_line(r);
        CHECK(line.find("elapsed") == std::string::npos);
        const RoundReport back = report_from_json_line(line);
        CHECK(report_to_json_line(back) == line);
        CHECK(back.weight_decay == r.weight_decay);
        CHECK(std::isnan(back.test_loss));
        CHECK(back.confusion == r.confusion);
    }

    TEST_CASE("malformed lines are reported with their numbers") {
        const auto dir = oracle::temp_dir("bad_reports");
        RoundReport r;
        r.confusion = ConfusionMatrix(2);
        std::ofstream(dir / "reports.jsonl") << report_to_json_line(r) << "\n{not json\n";
        std::vector<std::pair<std::size_t, std::string>> bad;
        CHECK(read_reports(dir / "reports.jsonl", &bad).size() == 1);
        REQUIRE(bad.size() == 1);
        CHECK(bad[0].first == 2);
    }
}
