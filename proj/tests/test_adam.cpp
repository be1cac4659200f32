#include <cmath>
#include <random>

#include "doctest.h"
#include "dbal/adam.hpp"
#include "dbal/errors.hpp"
#include "oracles.hpp"

using namespace dbal;

namespace {

// Textbook Adam with coupled L2, one parameter at a time.
struct ScalarAdam {
    double lr, b1, b2, eps, decay;
    double m = 0, v = 0;
    int t = 0;
    double step(double w, double g) {
        g += decay * w;
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return w - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace

TEST_SUITE("adam") {
    TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
        std::mt19937_64 gen(1);
        std::vector<Tensor> params{oracle::random_tensor({3, 4}, gen), oracle::random_tensor({5}, gen)};
        const auto before = params;
        const std::vector<Tensor> grads{Tensor({3, 4}), Tensor({5})};
        AdamState state = make_adam_state(params, AdamConfig{});
        for (int i = 0; i < 5; ++i) adam_step(params, grads, state);
        CHECK(params == before);
        CHECK(state.step_count == 5);
    }

    TEST_CASE("first step with unit gradient") {
        std::vector<Tensor> params{Tensor({1}, 0.0)};
        const std::vector<Tensor> grads{Tensor({1}, 1.0)};
        AdamState state = make_adam_state(params, AdamConfig{});
        adam_step(params, grads, state);
        // bias-corrected m = v = 1, so the step is lr / (1 + eps)
        CHECK(-params[0][0] == doctest::Approx(9.99999e-5).epsilon(1e-6));
        CHECK(-params[0][0] == doctest::Approx(1e-4 / (1 + 1e-8)).epsilon(1e-12));
        CHECK(state.step_count == 1);
    }

    TEST_CASE("matches a scalar reference over many steps with decay") {
        std::mt19937_64 gen(2);
        AdamConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.weight_decay = 0.0025;
        std::vector<Tensor> params{oracle::random_tensor({50}, gen)};
        std::vector<ScalarAdam> ref(50, ScalarAdam{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay});
        std::vector<double> w(params[0].values().begin(), params[0].values().end());
        AdamState state = make_adam_state(params, cfg);
        for (int t = 0; t < 40; ++t) {
            std::vector<Tensor> grads{oracle::random_tensor({50}, gen)};
            for (std::size_t i = 0; i < 50; ++i) w[i] = ref[i].step(w[i], grads[0][i]);
            adam_step(params, grads, state);
        }
        for (std::size_t i = 0; i < 50; ++i) CHECK(params[0][i] == doctest::Approx(w[i]).epsilon(1e-12));
    }

    TEST_CASE("decay coefficient follows (1 - p) l^2 / |D_T|") {
        CHECK(weight_decay_coefficient(0.5, 0.5, 100) == 0.0025);
        CHECK(weight_decay_coefficient(0.5, 0.5, 600) == doctest::Approx(0.000416666666).epsilon(1e-9));
        CHECK_THROWS_AS(weight_decay_coefficient(0.5, 0.5, 0), ConfigError);
    }

    TEST_CASE("incongruent shapes are rejected") {
        std::vector<Tensor> params{Tensor({2})};
        AdamState state = make_adam_state(params, AdamConfig{});
        const std::vector<Tensor> wrong{Tensor({3})};
        CHECK_THROWS_AS(adam_step(params, wrong, state), ConfigError);
        CHECK(state.step_count == 0);
    }
}
