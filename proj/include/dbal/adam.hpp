#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dbal/tensor.hpp"

namespace dbal {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Coupled L2: the effective gradient is g + weight_decay * param.
    double weight_decay = 0.0;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step_count = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
};

/// Zeroed moments shaped like `params`.
AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config);

/// One bias-corrected Adam update applied in place. Throws ConfigError when
/// params, grads and moments are not shape-congruent.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

/// Weight decay from dropout probability p, squared length scale l^2 and
/// training set size: (1 - p) * l^2 / |D_T|.
double weight_decay_coefficient(double dropout_p, double length_scale_sq,
                                std::size_t training_size);

}  // namespace dbal
