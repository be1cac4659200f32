#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "doctest.h"
#include "dbal/data.hpp"
#include "dbal/errors.hpp"
#include "oracles.hpp"

using namespace dbal;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream(path) << text;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const LoadError& e) {
        return e.what();
    }
    return {};
}

std::vector<std::uint8_t> bytes_of(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimum-norm least-squares linear probe on raw pixels (plus bias), fit to
// +-1 targets through the n x n Gram matrix.
double linear_probe_accuracy(const std::vector<Example>& examples) {
    const auto n = static_cast<Eigen::Index>(examples.size());
    const auto d = static_cast<Eigen::Index>(examples.front().image.size());
    Eigen::MatrixXd x(n, d + 1);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& e = examples[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = e.image[static_cast<std::size_t>(j)];
        x(i, d) = 1.0;
        y(i) = e.label == 1 ? 1.0 : -1.0;
    }
    const Eigen::VectorXd alpha = (x * x.transpose()).ldlt().solve(y);
    const Eigen::VectorXd margins = x * (x.transpose() * alpha);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) correct += margins(i) * y(i) > 0;
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("manifest") {
    TEST_CASE("well-formed manifest") {
        const auto dir = oracle::temp_dir("manifest_ok");
        for (const char* name : {"a.dbt", "b.dbt", "c.dbt"}) write_raw_tensor(dir / name, Tensor({3, 2, 2}, 0.5));
        write_text(dir / "m.csv", "id,path,label,split\na,a.dbt,0,train\nb,b.dbt,positive,eval\nc,c.dbt,1,test\n");
        const DatasetManifest m = load_manifest(dir / "m.csv", {"negative", "positive"});
        REQUIRE(m.rows.size() == 3);
        CHECK(m.rows[1].label == 1);
        CHECK(m.rows[1].split == Split::eval);
        CHECK(m.histogram(Split::train) == std::vector<std::size_t>{1, 0});
        CHECK(m.split_size(Split::test) == 1);
    }

    TEST_CASE("every offender is listed") {
        const auto dir = oracle::temp_dir("manifest_bad");
        write_raw_tensor(dir / "a.dbt", Tensor({3, 2, 2}));
        write_text(dir / "m.csv",
                   "id,path,label,split\na,a.dbt,0,train\na,a.dbt,0,train\nb,a.dbt,7,train\nc,nope.dbt,0,test\n"
                   "d,a.dbt,0,holdout\n");
        const std::string msg = error_of([&] { load_manifest(dir / "m.csv", {"negative", "positive"}); });
        CHECK(msg.find("duplicate id 'a'") != std::string::npos);
        CHECK(msg.find("unknown label '7'") != std::string::npos);
        CHECK(msg.find("nope.dbt") != std::string::npos);
        CHECK(msg.find("unknown split 'holdout'") != std::string::npos);
        CHECK(error_of([&] { load_manifest(dir / "absent.csv", {"a", "b"}); }).find("absent.csv") != std::string::npos);
    }

    TEST_CASE("save and load round-trip") {
        const auto dir = oracle::temp_dir("manifest_rt");
        DatasetManifest m;
        m.class_names = {"negative", "positive"};
        m.rows = {{"x1", "x1.dbt", 0, Split::train}, {"x2", "sub/x2.dbt", 1, Split::test}, {"x3", "x3.dbt", 1, Split::eval}};
        save_manifest(dir / "m.csv", m);
        CHECK(load_manifest(dir / "m.csv", m.class_names, false) == m);
    }

    TEST_CASE("700/200/350 split sizes") {
        const auto dir = oracle::temp_dir("manifest_sizes");
        std::ofstream out(dir / "m.csv");
        out << "id,path,label,split\n";
        for (int i = 0; i < 1250; ++i) {
            const char* split = i < 700 ? "train" : i < 900 ? "eval" : "test";
            out << "i" << i << ",x.png," << (i % 5 == 0) << "," << split << "\n";
        }
        out.close();
        const DatasetManifest m = load_manifest(dir / "m.csv", {"benign", "malignant"}, false);
        CHECK(m.split_size(Split::train) == 700);
        CHECK(m.split_size(Split::eval) == 200);
        CHECK(m.split_size(Split::test) == 350);
    }
}

TEST_SUITE("raw-tensors") {
    TEST_CASE("float64 layout is bit-exact") {
        const auto dir = oracle::temp_dir("raw");
        const Tensor t({2, 3}, {1, -2, 3.5, 0.25, 1e-300, -0.0});
        write_raw_tensor(dir / "t.dbt", t);
        const auto b = bytes_of(dir / "t.dbt");
        REQUIRE(b.size() == 8 + 2 * 8 + 6 * 8);
        CHECK(std::string(b.begin(), b.begin() + 4) == "DBTN");
        CHECK(b[4] == 1);
        CHECK(b[5] == 1);
        CHECK(b[6] == 2);
        CHECK(b[7] == 0);
        CHECK(b[8] == 2);   // first dim, little-endian
        CHECK(b[16] == 3);
        CHECK(b[24 + 7] == 0x3F);  // 1.0 = 0x3FF0000000000000
        CHECK(b[24 + 6] == 0xF0);
        const Tensor back = read_raw_tensor(dir / "t.dbt");
        CHECK(back.shape() == t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::signbit(back[i]) == std::signbit(t[i]));
        CHECK(back == t);
    }

    TEST_CASE("uint8 rasters load as scaled channel-first images") {
        const auto dir = oracle::temp_dir("raw_u8");
        Tensor hwc({2, 2, 3});
        for (std::size_t i = 0; i < 12; ++i) hwc[i] = static_cast<double>(i * 20);
        write_raw_tensor(dir / "img.dbt", hwc, RawDtype::uint8);
        CHECK(raw_tensor_dtype(dir / "img.dbt") == RawDtype::uint8);
        const Tensor img = load_image(dir / "img.dbt");
        CHECK(img.shape() == Tensor::Shape{3, 2, 2});
        CHECK(img.at({1, 0, 1}) == doctest::Approx(80.0 / 255.0));  // pixel (0,1) channel 1 = index 4
    }

    TEST_CASE("corrupt files are load errors with the path") {
        const auto dir = oracle::temp_dir("raw_bad");
        write_text(dir / "bad.dbt", "XXXXXXXXXXXX");
        CHECK(error_of([&] { read_raw_tensor(dir / "bad.dbt"); }).find("bad.dbt") != std::string::npos);
        write_raw_tensor(dir / "short.dbt", Tensor({4, 4}));
        fs::resize_file(dir / "short.dbt", 40);
        CHECK(error_of([&] { read_raw_tensor(dir / "short.dbt"); }).find("truncated") != std::string::npos);
        CHECK_THROWS_AS(load_image(dir / "missing.png"), LoadError);
    }
}

TEST_SUITE("preprocess") {
    TEST_CASE("no flip and full crop make train equal eval") {
        std::mt19937_64 gen(1);
        const Tensor img = oracle::random_tensor({3, 20, 20}, gen, 0, 1);
        PreprocessConfig cfg;
        cfg.target_size = 16;
        cfg.crop_fraction = 1.0;
        cfg.flip_probability = 0.0;
        Rng a(1), b(2);
        CHECK(preprocess(img, cfg, PreprocessMode::train, a) == preprocess(img, cfg, PreprocessMode::eval, b));
    }

    TEST_CASE("flip is an involution") {
        std::mt19937_64 gen(2);
        const Tensor img = oracle::random_tensor({3, 5, 7}, gen);
        CHECK(horizontal_flip(horizontal_flip(img)) == img);
        CHECK(horizontal_flip(img).at({1, 2, 0}) == img.at({1, 2, 6}));
    }

    TEST_CASE("constant image standardizes to zero mean") {
        const Tensor img({3, 8, 8}, 0.4);
        const NormStats stats = compute_norm_stats({img});
        const Tensor out = standardize(img, stats);
        for (double v : out.values()) CHECK(std::abs(v) < 1e-9);
    }

    TEST_CASE("standardized training split has unit statistics") {
        SyntheticSpec spec;
        spec.train_counts = {60, 40};
        spec.eval_counts = {1, 1};
        spec.test_counts = {1, 1};
        spec.seed = 4;
        const auto data = generate_synthetic(spec);
        std::vector<Tensor> images;
        for (const auto& e : data.splits.train) images.push_back(e.image);
        PreprocessConfig cfg;
        cfg.stats = compute_norm_stats(images);
        std::array<double, 3> sum{}, sq{};
        double count = 0;
        Rng unused(0);
        for (const auto& img : images) {
            const Tensor out = preprocess(img, cfg, PreprocessMode::eval, unused);
            const std::size_t plane = out.size() / 3;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < plane; ++i) {
                    sum[c] += out[c * plane + i];
                    sq[c] += out[c * plane + i] * out[c * plane + i];
                }
            count += static_cast<double>(plane);
        }
        for (std::size_t c = 0; c < 3; ++c) {
            const double mean = sum[c] / count;
            CHECK(std::abs(mean) <= 0.05);
            CHECK(std::abs(std::sqrt(sq[c] / count - mean * mean) - 1.0) <= 0.1);
        }
    }

    TEST_CASE("train mode is seeded-deterministic") {
        std::mt19937_64 gen(3);
        const Tensor img = oracle::random_tensor({3, 40, 40}, gen, 0, 1);
        const PreprocessConfig cfg;
        Rng a(9), b(9);
        CHECK(preprocess(img, cfg, PreprocessMode::train, a) == preprocess(img, cfg, PreprocessMode::train, b));
        CHECK(preprocess(img, cfg, PreprocessMode::eval, a).shape() == Tensor::Shape{3, 32, 32});
    }

    TEST_CASE("bilinear resize keeps constants and identity sizes") {
        std::mt19937_64 gen(4);
        const Tensor img = oracle::random_tensor({3, 9, 11}, gen);
        CHECK(resize_bilinear(img, 9, 11) == img);
        const Tensor flat = resize_bilinear(Tensor({3, 7, 7}, 0.3), 32, 32);
        for (double v : flat.values()) CHECK(v == doctest::Approx(0.3));
        const Tensor crop = center_crop(img, 0.5);
        CHECK(crop.dim(1) < img.dim(1));
    }

    TEST_CASE("invalid settings are configuration errors") {
        PreprocessConfig cfg;
        cfg.crop_fraction = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg.crop_fraction = 1.0;
        cfg.flip_probability = 1.5;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_SUITE("synthetic") {
    TEST_CASE("same seed, same dataset") {
        SyntheticSpec spec;
        spec.train_counts = {20, 20};
        spec.eval_counts = {5, 5};
        spec.test_counts = {5, 5};
        spec.seed = 12;
        const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
        REQUIRE(a.splits.train.size() == b.splits.train.size());
        for (std::size_t i = 0; i < a.splits.train.size(); ++i) {
            CHECK(a.splits.train[i].id == b.splits.train[i].id);
            CHECK(a.splits.train[i].image == b.splits.train[i].image);
        }
        spec.seed = 13;
        CHECK_FALSE(generate_synthetic(spec).splits.train[0].image == a.splits.train[0].image);
    }

    TEST_CASE("imbalanced histogram") {
        SyntheticSpec spec;
        spec.image_size = 8;
        spec.train_counts = {400, 100};
        spec.eval_counts = {0, 0};
        spec.test_counts = {0, 0};
        const auto data = generate_synthetic(spec);
        CHECK(data.manifest.histogram(Split::train) == std::vector<std::size_t>{400, 100});
    }

    TEST_CASE("noise-free data is linearly separable") {
        SyntheticSpec spec;
        spec.difficulty = 0.0;
        spec.train_counts = {50, 50};
        spec.eval_counts = {0, 0};
        spec.test_counts = {0, 0};
        spec.seed = 3;
        CHECK(linear_probe_accuracy(generate_synthetic(spec).splits.train) == 1.0);
    }

    TEST_CASE("written datasets reload through the manifest") {
        SyntheticSpec spec;
        spec.image_size = 8;
        spec.train_counts = {3, 2};
        spec.eval_counts = {1, 1};
        spec.test_counts = {2, 2};
        const auto data = generate_synthetic(spec);
        const auto dir = oracle::temp_dir("synth_write");
        const fs::path manifest = write_dataset(data, dir);
        const DatasetManifest m = load_manifest(manifest, data.manifest.class_names);
        const DatasetSplits back = load_dataset(m);
        REQUIRE(back.test.size() == 4);
        CHECK(back.train[0].image == data.splits.train[0].image);
        CHECK(back.test[3].label == data.splits.test[3].label);
    }

    TEST_CASE("fewer than two classes is rejected") {
        SyntheticSpec spec;
        spec.train_counts = {5};
        spec.eval_counts = {5};
        spec.test_counts = {5};
        CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    }
}

TEST_SUITE("splitting") {
    TEST_CASE("largest remainder rounding") {
        CHECK(proportional_counts(100, {3, 1}) == std::vector<std::size_t>{75, 25});
        CHECK(proportional_counts(10, {1, 1, 1}) == std::vector<std::size_t>{4, 3, 3});
        CHECK(proportional_counts(0, {1, 2}) == std::vector<std::size_t>{0, 0});
    }

    TEST_CASE("stratified train/eval split keeps ratios and ids disjoint") {
        std::vector<Example> all;
        for (int i = 0; i < 200; ++i) all.push_back({"e" + std::to_string(i), Tensor({1}), i < 160 ? 0 : 1});
        Rng rng(5);
        auto [train, eval] = split_train_eval(all, 50, true, 2, rng);
        CHECK(train.size() == 150);
        CHECK(eval.size() == 50);
        std::size_t pos = 0;
        for (const auto& e : eval) pos += e.label;
        CHECK(pos == 10);
        std::set<std::string> ids;
        for (const auto& e : train) ids.insert(e.id);
        for (const auto& e : eval) CHECK(ids.insert(e.id).second);
        Rng again(5);
        CHECK_THROWS_AS(split_train_eval(all, 201, true, 2, again), ConfigError);
    }
}
