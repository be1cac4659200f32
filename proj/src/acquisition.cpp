#include "dbal/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "dbal/errors.hpp"
#include "dbal/ops.hpp"

namespace dbal {
namespace {

double entropy(const double* probs, std::size_t classes) {
    double h = 0.0;
    for (std::size_t c = 0; c < classes; ++c) h -= probs[c] * std::log(probs[c] + kLogEpsilon);
    // epsilon makes a one-hot row come out at about -1e-12
    return std::max(h, 0.0);
}

AcquisitionScores empty_scores(AcquisitionFunction f, const PredictiveSamples& samples) {
    return {f, samples.example_ids, std::vector<double>(samples.examples(), 0.0)};
}

}  // namespace

std::string_view to_string(AcquisitionFunction f) {
    switch (f) {
        case AcquisitionFunction::max_entropy: return "max_entropy";
        case AcquisitionFunction::mean_std: return "mean_std";
        case AcquisitionFunction::bald: return "bald";
        case AcquisitionFunction::random: return "random";
    }
    return "?";
}

std::optional<AcquisitionFunction> parse_acquisition_function(std::string_view name) {
    for (auto f : {AcquisitionFunction::max_entropy, AcquisitionFunction::mean_std,
                   AcquisitionFunction::bald, AcquisitionFunction::random}) {
        if (name == to_string(f)) return f;
    }
    return std::nullopt;
}

std::string_view to_string(SelectionDirection d) {
    return d == SelectionDirection::most_uncertain ? "most_uncertain" : "least_uncertain";
}

std::optional<SelectionDirection> parse_selection_direction(std::string_view name) {
    if (name == "most_uncertain" || name == "most") return SelectionDirection::most_uncertain;
    if (name == "least_uncertain" || name == "least") return SelectionDirection::least_uncertain;
    return std::nullopt;
}

Tensor consensus_probs(const PredictiveSamples& samples) {
    const std::size_t t_count = samples.passes(), n = samples.examples(), c = samples.classes();
    if (t_count == 0) throw ConfigError("consensus over zero passes");
    Tensor mean({n, c});
    for (std::size_t t = 0; t < t_count; ++t) {
        const double* slice = samples.samples.data() + t * n * c;
        for (std::size_t i = 0; i < n * c; ++i) mean[i] += slice[i];
    }
    const double inv = 1.0 / static_cast<double>(t_count);
    for (double& v : mean.values()) v *= inv;
    return mean;
}

AcquisitionScores score_max_entropy(const PredictiveSamples& samples) {
    auto out = empty_scores(AcquisitionFunction::max_entropy, samples);
    const Tensor mean = consensus_probs(samples);
    const std::size_t c = samples.classes();
    for (std::size_t i = 0; i < out.size(); ++i) out.scores[i] = entropy(mean.data() + i * c, c);
    return out;
}

AcquisitionScores score_mean_std(const PredictiveSamples& samples) {
    auto out = empty_scores(AcquisitionFunction::mean_std, samples);
    const std::size_t t_count = samples.passes(), n = samples.examples(), c = samples.classes();
    const double inv = 1.0 / static_cast<double>(t_count);
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            double mean = 0.0;
            for (std::size_t t = 0; t < t_count; ++t) mean += samples.samples[(t * n + i) * c + k];
            mean *= inv;
            double var = 0.0;
            for (std::size_t t = 0; t < t_count; ++t) {
                const double d = samples.samples[(t * n + i) * c + k] - mean;
                var += d * d;
            }
            total += std::sqrt(var * inv);
        }
        out.scores[i] = total / static_cast<double>(c);
    }
    return out;
}

AcquisitionScores score_bald(const PredictiveSamples& samples) {
    auto out = empty_scores(AcquisitionFunction::bald, samples);
    const Tensor mean = consensus_probs(samples);
    const std::size_t t_count = samples.passes(), n = samples.examples(), c = samples.classes();
    for (std::size_t i = 0; i < n; ++i) {
        double expected = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) {
            expected += entropy(samples.samples.data() + (t * n + i) * c, c);
        }
        expected /= static_cast<double>(t_count);
        // mutual information is non-negative; this only absorbs rounding
        out.scores[i] = std::max(0.0, entropy(mean.data() + i * c, c) - expected);
    }
    return out;
}

AcquisitionScores score_random(const std::vector<std::string>& example_ids, Rng& rng) {
    AcquisitionScores out{AcquisitionFunction::random, example_ids,
                          std::vector<double>(example_ids.size())};
    for (double& s : out.scores) s = uniform01(rng);
    return out;
}

AcquisitionScores score(AcquisitionFunction function, const PredictiveSamples& samples, Rng& rng) {
    switch (function) {
        case AcquisitionFunction::max_entropy: return score_max_entropy(samples);
        case AcquisitionFunction::mean_std: return score_mean_std(samples);
        case AcquisitionFunction::bald: return score_bald(samples);
        case AcquisitionFunction::random: return score_random(samples.example_ids, rng);
    }
    throw ConfigError("unknown acquisition function");
}

std::vector<std::string> select_top_k(const AcquisitionScores& scores,
                                      const SelectionConfig& config) {
    if (config.k == 0) throw ConfigError("selection size k must be at least 1");
    if (config.k > scores.size()) {
        throw SelectionError("cannot select " + std::to_string(config.k) + " of " +
                             std::to_string(scores.size()) + " scored examples");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const bool most = config.direction == SelectionDirection::most_uncertain;
    auto better = [&](std::size_t a, std::size_t b) {
        const double sa = scores.scores[a], sb = scores.scores[b];
        if (sa != sb) return most ? sa > sb : sa < sb;
        return scores.example_ids[a] < scores.example_ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(config.k),
                      order.end(), better);
    std::vector<std::string> chosen;
    chosen.reserve(config.k);
    for (std::size_t i = 0; i < config.k; ++i) chosen.push_back(scores.example_ids[order[i]]);
    return chosen;
}

void write_scores_csv(std::ostream& out, const AcquisitionScores& scores) {
    out << "example_id,function_id,score\n";
    const auto fn = to_string(scores.function);
    out << std::setprecision(17);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out << scores.example_ids[i] << ',' << fn << ',' << scores.scores[i] << '\n';
    }
}

}  // namespace dbal
