#pragma once

#include <cstddef>
#include <ostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dbal/model.hpp"
#include "dbal/rng.hpp"

namespace dbal {

enum class AcquisitionFunction { max_entropy, mean_std, bald, random };

std::string_view to_string(AcquisitionFunction f);
/// nullopt for unknown identifiers.
std::optional<AcquisitionFunction> parse_acquisition_function(std::string_view name);

struct AcquisitionScores {
    AcquisitionFunction function = AcquisitionFunction::random;
    std::vector<std::string> example_ids;
    std::vector<double> scores;  // aligned with example_ids

    std::size_t size() const { return scores.size(); }
};

enum class SelectionDirection { most_uncertain, least_uncertain };

std::string_view to_string(SelectionDirection d);
std::optional<SelectionDirection> parse_selection_direction(std::string_view name);

struct SelectionConfig {
    std::size_t k = 100;
    SelectionDirection direction = SelectionDirection::most_uncertain;
};

/// MC-averaged predictive distribution: [n,c] = mean_t samples[t,n,c].
Tensor consensus_probs(const PredictiveSamples& samples);

/// Entropy (nats) of the consensus distribution.
AcquisitionScores score_max_entropy(const PredictiveSamples& samples);

/// Mean over classes of the population standard deviation across passes.
AcquisitionScores score_mean_std(const PredictiveSamples& samples);

/// Mutual information: consensus entropy minus the mean per-pass entropy.
AcquisitionScores score_bald(const PredictiveSamples& samples);

/// i.i.d. uniform [0,1) scores in id order.
AcquisitionScores score_random(const std::vector<std::string>& example_ids, Rng& rng);

/// Dispatches to one of the scorers above.
AcquisitionScores score(AcquisitionFunction function, const PredictiveSamples& samples, Rng& rng);

/// The k highest (most_uncertain) or lowest (least_uncertain) scores, ordered
/// by score then ascending id. Throws SelectionError when k exceeds the pool.
std::vector<std::string> select_top_k(const AcquisitionScores& scores,
                                      const SelectionConfig& config);

/// CSV rows "example_id,function_id,score" with a header line.
void write_scores_csv(std::ostream& out, const AcquisitionScores& scores);

}  // namespace dbal
