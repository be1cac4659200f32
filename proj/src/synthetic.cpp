#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dbal/data.hpp"
#include "dbal/errors.hpp"

namespace dbal {
namespace {

// Box-Muller on uniform01 so the stream is library independent.
double gaussian(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Long-tailed subtype frequencies shared by every class.
constexpr double kSubtypeWeights[] = {0.70, 0.15, 0.10, 0.05};
constexpr std::size_t kSubtypes = std::size(kSubtypeWeights);
constexpr double kStripeAmplitude = 0.18;
constexpr double kTintAmplitude = 0.25;

std::size_t draw_subtype(Rng& rng) {
    double u = uniform01(rng);
    for (std::size_t j = 0; j + 1 < kSubtypes; ++j) {
        if (u < kSubtypeWeights[j]) return j;
        u -= kSubtypeWeights[j];
    }
    return kSubtypes - 1;
}

Tensor render(int label, std::size_t num_classes, std::size_t size, double noise, Rng& rng) {
    const double s = static_cast<double>(size);
    const double cx = s * (0.3 + 0.4 * uniform01(rng));
    const double cy = s * (0.3 + 0.4 * uniform01(rng));
    const double radius = s * (0.18 + 0.10 * uniform01(rng));
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);

    // orientations and tints interleave the classes
    const std::size_t pattern = draw_subtype(rng) * num_classes + static_cast<std::size_t>(label);
    const double patterns = static_cast<double>(kSubtypes * num_classes);
    const double angle = std::numbers::pi * static_cast<double>(pattern) / patterns;
    const double dir_x = std::cos(angle), dir_y = std::sin(angle);
    const double frequency = 2.0 * std::numbers::pi * 4.0 / s;
    const double tint_angle = 2.0 * std::numbers::pi * std::fmod(0.618034 * static_cast<double>(pattern), 1.0);
    const double tint[3] = {kTintAmplitude * std::cos(tint_angle), 0.0, kTintAmplitude * std::sin(tint_angle)};

    const double skin[3] = {0.78, 0.60, 0.52};
    const double lesion[3] = {0.42, 0.28, 0.22};
    Tensor img({3, size, size});
    const std::size_t plane = size * size;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double dist = std::hypot(px - cx, py - cy);
            // soft lesion edge over ~1.5 pixels
            const double inside = 1.0 / (1.0 + std::exp((dist - radius) / 1.5));
            const double stripe = std::sin(frequency * (px * dir_x + py * dir_y) + phase);
            for (std::size_t c = 0; c < 3; ++c) {
                const double signal = kStripeAmplitude * stripe + tint[c];
                const double value = skin[c] + inside * (lesion[c] - skin[c] + signal);
                img[c * plane + y * size + x] = value;
            }
        }
    }
    if (noise > 0.0) {
        for (double& v : img.values()) v += noise * gaussian(rng);
    }
    for (double& v : img.values()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    const std::size_t classes = spec.train_counts.size();
    if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (spec.eval_counts.size() != classes || spec.test_counts.size() != classes) {
        throw ConfigError("synthetic per-class counts must have one entry per class in every split");
    }
    if (spec.image_size < 4) throw ConfigError("synthetic image_size must be at least 4");

    SyntheticDataset out;
    out.manifest.class_names = default_class_names(classes);
    out.splits.num_classes = classes;
    const double noise = 0.25 * std::clamp(spec.difficulty, 0.0, 1.0);
    Rng rng = derive_rng({spec.seed, 0x5157});
    std::size_t next_id = 0;

    const std::pair<Split, const std::vector<std::size_t>*> plan[] = {
        {Split::train, &spec.train_counts}, {Split::eval, &spec.eval_counts}, {Split::test, &spec.test_counts}};
    for (const auto& [split, counts] : plan) {
        std::vector<int> labels;
        for (std::size_t c = 0; c < classes; ++c) labels.insert(labels.end(), (*counts)[c], static_cast<int>(c));
        shuffle(labels, rng);
        auto& target = split == Split::train ? out.splits.train
                       : split == Split::eval ? out.splits.eval
                                              : out.splits.test;
        for (int label : labels) {
            char id[16];
            std::snprintf(id, sizeof id, "s%06zu", next_id++);
            target.push_back({id, render(label, classes, spec.image_size, noise, rng), label});
            out.manifest.rows.push_back({id, "", label, split});
        }
    }
    return out;
}

}  // namespace dbal
