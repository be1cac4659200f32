#include "dbal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "dbal/errors.hpp"
#include "dbal/ops.hpp"

namespace dbal {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : classes_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
    if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= classes_ ||
        static_cast<std::size_t>(predicted) >= classes_) {
        throw ConfigError("confusion entry (" + std::to_string(truth) + "," +
                          std::to_string(predicted) + ") outside " + std::to_string(classes_) +
                          " classes");
    }
    counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ConfigError("merging confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

double ConfusionMatrix::accuracy() const {
    std::uint64_t diagonal = 0;
    for (std::size_t c = 0; c < classes_; ++c) diagonal += count(c, c);
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(diagonal) / static_cast<double>(n);
}

std::vector<double> ConfusionMatrix::per_class_recall() const {
    std::vector<double> recall(classes_);
    for (std::size_t t = 0; t < classes_; ++t) {
        std::uint64_t row = 0;
        for (std::size_t p = 0; p < classes_; ++p) row += count(t, p);
        recall[t] = row == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(count(t, t)) / static_cast<double>(row);
    }
    return recall;
}

int predicted_class(std::span<const double> probs) {
    // max_element returns the first maximum, i.e. the lowest index on ties
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

EvalResult evaluate_probs(const Tensor& probs, std::span<const int> labels) {
    if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
        throw ConfigError("evaluation needs one probability row per label, got " +
                          shape_string(probs.shape()) + " for " + std::to_string(labels.size()) +
                          " labels");
    }
    if (labels.empty()) throw ConfigError("cannot evaluate an empty split");
    const std::size_t classes = probs.dim(1);
    EvalResult result{cross_entropy_loss(probs, one_hot(labels, classes)), 0.0,
                      ConfusionMatrix(classes)};
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = predicted_class({probs.data() + i * classes, classes});
        result.confusion.add(labels[i], pred);
        if (pred == labels[i]) ++correct;
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    return result;
}

EvalResult evaluate(const ModelState& model, const Tensor& images, std::span<const int> labels,
                    std::size_t batch_size) {
    if (labels.empty()) throw ConfigError("cannot evaluate an empty split");
    if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
    // forward_eval already chunks internally; batch_size bounds the copy here
    const std::size_t n = labels.size();
    const std::size_t stride = images.size() / std::max<std::size_t>(images.dim(0), 1);
    Tensor probs({n, model.config.num_classes});
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t end = std::min(n, begin + batch_size);
        Tensor::Shape shape = images.shape();
        shape[0] = end - begin;
        Tensor chunk(shape, std::vector<double>(images.data() + begin * stride,
                                                images.data() + end * stride));
        const Tensor p = forward_eval(model, chunk);
        std::copy(p.values().begin(), p.values().end(),
                  probs.data() + begin * model.config.num_classes);
    }
    return evaluate_probs(probs, labels);
}

AblationTable summarize_ablation(const std::vector<AblationEntry>& entries,
                                 std::vector<std::string> methods,
                                 std::vector<std::size_t> query_sizes) {
    if (methods.empty()) {
        for (const auto& e : entries) {
            if (std::find(methods.begin(), methods.end(), e.method) == methods.end()) {
                methods.push_back(e.method);
            }
        }
    }
    if (query_sizes.empty()) {
        for (const auto& e : entries) {
            if (std::find(query_sizes.begin(), query_sizes.end(), e.query_size) == query_sizes.end()) {
                query_sizes.push_back(e.query_size);
            }
        }
    }
    AblationTable table{methods, query_sizes, {}};
    for (const auto& method : methods) {
        for (const char* metric : {"loss", "accuracy"}) {
            std::vector<std::optional<AblationCell>> row;
            for (std::size_t q : query_sizes) {
                std::vector<double> values;
                for (const auto& e : entries) {
                    if (e.method == method && e.query_size == q) {
                        values.push_back(std::string(metric) == "loss" ? e.test_loss : e.test_accuracy);
                    }
                }
                if (values.empty()) {
                    row.emplace_back(std::nullopt);
                    continue;
                }
                AblationCell cell;
                cell.runs = values.size();
                cell.mean = std::accumulate(values.begin(), values.end(), 0.0) /
                            static_cast<double>(values.size());
                if (values.size() > 1) {
                    double ss = 0.0;
                    for (double v : values) ss += (v - cell.mean) * (v - cell.mean);
                    cell.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
                }
                row.emplace_back(cell);
            }
            table.cells[{method, metric}] = std::move(row);
        }
    }
    return table;
}

void AblationTable::write_csv(std::ostream& out) const {
    out << "method,metric";
    for (std::size_t q : query_sizes) out << ",q" << q;
    out << '\n';
    for (const auto& method : methods) {
        for (const char* metric : {"loss", "accuracy"}) {
            out << method << ',' << metric;
            for (const auto& cell : cells.at({method, metric})) {
                out << ',';
                if (!cell) {
                    out << "NA";
                } else if (cell->runs == 1) {
                    out << std::fixed << std::setprecision(4) << cell->mean;
                } else {
                    out << std::fixed << std::setprecision(4) << cell->mean << " ± " << cell->stddev;
                }
                out.unsetf(std::ios::floatfield);
            }
            out << '\n';
        }
    }
}

void write_confusion_long_csv(std::ostream& out, const ConfusionMatrix& matrix) {
    out << "true,pred,count\n";
    for (std::size_t t = 0; t < matrix.num_classes(); ++t) {
        for (std::size_t p = 0; p < matrix.num_classes(); ++p) {
            out << t << ',' << p << ',' << matrix.count(t, p) << '\n';
        }
    }
}

}  // namespace dbal
