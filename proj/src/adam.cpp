#include "dbal/adam.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "dbal/errors.hpp"

namespace dbal {
namespace {

constexpr std::size_t kBlock = 512;

}  // namespace


AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config) {
    AdamState state;
    state.config = config;
    for (const auto& p : params) {
        state.first_moment.emplace_back(p.shape());
        state.second_moment.emplace_back(p.shape());
    }
    return state;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
        params.size() != state.second_moment.size()) {
        throw ConfigError("adam: " + std::to_string(params.size()) + " parameters, " +
                          std::to_string(grads.size()) + " gradients, " +
                          std::to_string(state.first_moment.size()) + " moment slots");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape() ||
            params[i].shape() != state.first_moment[i].shape()) {
            throw ConfigError("adam: parameter " + std::to_string(i) + " has shape " +
                              shape_string(params[i].shape()) + " but gradient " +
                              shape_string(grads[i].shape()));
        }
    }

    const AdamConfig& c = state.config;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);

    const double step = c.learning_rate / correction1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t size = params[i].size();
        // blocks keep the four streams cache-resident across the three passes
        for (std::size_t begin = 0; begin < size; begin += kBlock) {
            const auto len = static_cast<Eigen::Index>(std::min(kBlock, size - begin));
            Eigen::Map<Eigen::ArrayXd> w(params[i].data() + begin, len);
            Eigen::Map<const Eigen::ArrayXd> g(grads[i].data() + begin, len);
            Eigen::Map<Eigen::ArrayXd> m(state.first_moment[i].data() + begin, len);
            Eigen::Map<Eigen::ArrayXd> v(state.second_moment[i].data() + begin, len);
            m = c.beta1 * m + (1.0 - c.beta1) * (g + c.weight_decay * w);
            v = c.beta2 * v + (1.0 - c.beta2) * (g + c.weight_decay * w).square();
            w -= step * m / ((v / correction2).sqrt() + c.epsilon);
        }
    }
}

double weight_decay_coefficient(double dropout_p, double length_scale_sq,
                                std::size_t training_size) {
    if (training_size == 0) throw ConfigError("weight decay needs a non-empty training set");
    return (1.0 - dropout_p) * length_scale_sq / static_cast<double>(training_size);
}

}  // namespace dbal
