#include "dbal/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "dbal/errors.hpp"

namespace dbal {

std::size_t shape_numel(const Tensor::Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_string(const Tensor::Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ConfigError("tensor shape " + shape_string(shape_) + " holds " +
                          std::to_string(shape_numel(shape_)) +
                          " values, got " + std::to_string(data_.size()));
    }
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw ConfigError("index rank " + std::to_string(index.size()) +
                          " does not match tensor rank " +
                          std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape_[axis]) {
            throw ConfigError("index " + std::to_string(i) + " out of range on axis " +
                              std::to_string(axis) + " of " + shape_string(shape_));
        }
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
    return data_[flat_index(index)];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    return data_[flat_index(index)];
}

Tensor Tensor::reshaped(Shape shape) const& {
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
    return Tensor(std::move(shape), std::move(data_));
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace dbal
