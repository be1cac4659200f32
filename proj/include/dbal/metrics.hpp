#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dbal/model.hpp"

namespace dbal {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 2);

    void add(int truth, int predicted, std::uint64_t count = 1);
    void merge(const ConfusionMatrix& other);

    std::size_t num_classes() const { return classes_; }
    std::uint64_t count(std::size_t truth, std::size_t predicted) const {
        return counts_[truth * classes_ + predicted];
    }
    std::uint64_t total() const;
    double accuracy() const;
    /// Diagonal over row sum; NaN for classes absent from the split.
    std::vector<double> per_class_recall() const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

/// Argmax with ties resolved to the lowest class index.
int predicted_class(std::span<const double> probs);

struct EvalResult {
    double loss = 0.0;      // per-example mean cross-entropy
    double accuracy = 0.0;  // computed online from predictions
    ConfusionMatrix confusion;
};

/// Metrics from precomputed class probabilities [N,C].
EvalResult evaluate_probs(const Tensor& probs, std::span<const int> labels);

/// Deterministic evaluation (dropout off) in batches of `batch_size`.
EvalResult evaluate(const ModelState& model, const Tensor& images, std::span<const int> labels,
                    std::size_t batch_size = 64);

/// Final-round test metrics of one run, keyed for the ablation grid.
struct AblationEntry {
    std::string method;
    std::size_t query_size = 0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
};

struct AblationCell {
    std::size_t runs = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample std; 0 for single runs
};

struct AblationTable {
    std::vector<std::string> methods;
    std::vector<std::size_t> query_sizes;
    // (method, metric) -> per query size, nullopt = NA
    std::map<std::pair<std::string, std::string>, std::vector<std::optional<AblationCell>>> cells;

    /// Header "method,metric,q<k>..." then one loss and one accuracy row per method.
    void write_csv(std::ostream& out) const;
};

inline const std::vector<std::size_t> kDefaultQuerySizes{115, 100, 90, 80, 70, 60, 50};

/// Grid of methods x query sizes; repeated cells aggregate as mean +- sample std.
/// Empty `methods`/`query_sizes` take the order of first appearance in `entries`.
AblationTable summarize_ablation(const std::vector<AblationEntry>& entries,
                                 std::vector<std::string> methods = {},
                                 std::vector<std::size_t> query_sizes = {});

/// Long-format "true,pred,count" rows.
void write_confusion_long_csv(std::ostream& out, const ConfusionMatrix& matrix);

}  // namespace dbal
