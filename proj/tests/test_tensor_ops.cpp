#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dbal/errors.hpp"
#include "dbal/ops.hpp"
#include "dbal/rng.hpp"
#include "oracles.hpp"

using namespace dbal;

TEST_SUITE("tensor") {
    TEST_CASE("shape and storage agree") {
        Tensor t({2, 3, 4});
        CHECK(t.size() == 24);
        CHECK(shape_numel(t.shape()) == t.size());
        t.at({1, 2, 3}) = 5.0;
        CHECK(t[23] == 5.0);
        CHECK(shape_string(t.shape()) == "[2x3x4]");
        CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ConfigError);
        CHECK_THROWS_AS(t.reshaped({5, 5}), ConfigError);
        CHECK(t.reshaped({24})[23] == 5.0);
    }

    TEST_CASE("finiteness check") {
        Tensor t({3});
        CHECK(t.all_finite());
        t[1] = std::nan("");
        CHECK_FALSE(t.all_finite());
    }
}

TEST_SUITE("conv") {
    TEST_CASE("all-ones window sums") {
        const Tensor out = conv2d_forward(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 2, 2}, 1.0), Tensor({1}));
        CHECK(out.shape() == Tensor::Shape{1, 1, 2, 2});
        for (double v : out.values()) CHECK(v == 4.0);
    }

    TEST_CASE("1x1 unit kernel is the identity") {
        std::mt19937_64 gen(3);
        const Tensor x = oracle::random_tensor({2, 1, 5, 6}, gen);
        CHECK(conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1})) == x);
    }

    TEST_CASE("matches the nested-loop oracle on random shapes") {
        std::mt19937_64 gen(11);
        {
            const Tensor x = oracle::random_tensor({2, 3, 8, 8}, gen);
            const Tensor k = oracle::random_tensor({4, 3, 4, 4}, gen);
            const Tensor b = oracle::random_tensor({4}, gen);
            const Tensor got = conv2d_forward(x, k, b), want = oracle::conv2d(x, k, b);
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
        std::uniform_int_distribution<std::size_t> side(1, 8), small(1, 3);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t h = side(gen), w = side(gen);
            const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::min(h, w))(gen);
            const Tensor x = oracle::random_tensor({small(gen), small(gen), h, w}, gen);
            const Tensor kernel = oracle::random_tensor({small(gen), x.dim(1), k, k}, gen);
            const Tensor b = oracle::random_tensor({kernel.dim(0)}, gen);
            const Tensor got = conv2d_forward(x, kernel, b), want = oracle::conv2d(x, kernel, b);
            REQUIRE(got.shape() == want.shape());
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
        }
    }

    TEST_CASE("shape errors name the dimensions") {
        try {
            conv2d_forward(Tensor({1, 3, 8, 8}), Tensor({4, 2, 3, 3}), Tensor({4}));
            FAIL("expected a ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("[1x3x8x8]") != std::string::npos);
        }
        CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 3, 3}), Tensor({1, 1, 4, 4}), Tensor({1})), ConfigError);
        CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 3, 3}), Tensor({2, 1, 2, 2}), Tensor({1})), ConfigError);
    }
}

TEST_SUITE("maxpool") {
    TEST_CASE("2x2 window") {
        const PoolResult r = maxpool2d_forward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2);
        CHECK(r.output.size() == 1);
        CHECK(r.output[0] == 4.0);
        CHECK(r.argmax[0] == 3);
    }

    TEST_CASE("ties go to the lowest flat index") {
        const PoolResult r = maxpool2d_forward(Tensor({1, 2, 4, 4}, 7.0), 2);
        for (double v : r.output.values()) CHECK(v == 7.0);
        // first element of each window: plane*16 + (2i)*4 + 2j
        const std::vector<std::size_t> want{0, 2, 8, 10, 16, 18, 24, 26};
        CHECK(r.argmax == want);
    }

    TEST_CASE("matches the window-scanning oracle") {
        std::mt19937_64 gen(5);
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor x = oracle::random_tensor({1, 2, 4, 4}, gen);
            const PoolResult r = maxpool2d_forward(x, 2);
            CHECK(r.output == oracle::maxpool(x, 2));
            for (std::size_t i = 0; i < r.argmax.size(); ++i) CHECK(x[r.argmax[i]] == r.output[i]);
        }
    }

    TEST_CASE("non-divisible input is rejected") {
        CHECK_THROWS_AS(maxpool2d_forward(Tensor({1, 1, 5, 4}), 2), ConfigError);
    }

    TEST_CASE("backward routes gradient to the argmax") {
        const Tensor x({1, 1, 2, 2}, {1, 9, 3, 4});
        const PoolResult r = maxpool2d_forward(x, 2);
        const Tensor g = maxpool2d_backward(Tensor({1, 1, 1, 1}, 2.5), r.argmax, x.shape());
        CHECK(g == Tensor({1, 1, 2, 2}, {0, 2.5, 0, 0}));
    }
}

TEST_SUITE("softmax") {
    TEST_CASE("symmetric logits") {
        const Tensor p = softmax(Tensor({1, 2}, 0.0));
        CHECK(p[0] == 0.5);
        CHECK(p[1] == 0.5);
    }

    TEST_CASE("large logits do not overflow") {
        const Tensor p = softmax(Tensor({1, 2}, {1000.0, 0.0}));
        CHECK(p.all_finite());
        CHECK(p[0] == doctest::Approx(1.0));
        CHECK(p[1] < 1e-300);
    }

    TEST_CASE("matches extended precision") {
        const Tensor p = softmax(Tensor({1, 3}, {1.0, 2.0, 3.0}));
        const auto want = oracle::softmax({1.0L, 2.0L, 3.0L});
        for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - static_cast<double>(want[i])) < 1e-12);
    }

    TEST_CASE("rows normalise and ignore a constant shift") {
        std::mt19937_64 gen(9);
        for (int trial = 0; trial < 100; ++trial) {
            const Tensor logits = oracle::random_tensor({4, 7}, gen, -30.0, 30.0);
            Tensor shifted = logits;
            for (std::size_t r = 0; r < 4; ++r) {
                const double c = std::uniform_real_distribution<double>(-50, 50)(gen);
                for (std::size_t j = 0; j < 7; ++j) shifted[r * 7 + j] += c;
            }
            const Tensor a = softmax(logits), b = softmax(shifted);
            for (std::size_t r = 0; r < 4; ++r) {
                double sum = 0;
                for (std::size_t j = 0; j < 7; ++j) sum += a[r * 7 + j];
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
        }
    }
}

TEST_SUITE("cross-entropy") {
    const std::vector<int> class0{0}, class1{1};

    TEST_CASE("worked values") {
        CHECK(std::abs(cross_entropy_loss(Tensor({1, 2}, {1.0, 0.0}), one_hot(class0, 2))) < 1e-11);
        CHECK(cross_entropy_loss(Tensor({1, 2}, {0.5, 0.5}), one_hot(class0, 2)) ==
              doctest::Approx(0.693147).epsilon(1e-6));
        const long double want = -std::log(0.1L + 1e-12L);
        CHECK(std::abs(cross_entropy_loss(Tensor({1, 2}, {0.9, 0.1}), one_hot(class1, 2)) -
                       static_cast<double>(want)) < 1e-12);
        CHECK(static_cast<double>(want) == doctest::Approx(2.302585).epsilon(1e-6));
    }

    TEST_CASE("mean over rows and shape errors") {
        const std::vector<int> labels{0, 1};
        const double loss = cross_entropy_loss(Tensor({2, 2}, {0.5, 0.5, 0.5, 0.5}), one_hot(labels, 2));
        CHECK(loss == doctest::Approx(std::log(2.0)));
        CHECK_THROWS_AS(cross_entropy_loss(Tensor({2, 2}), one_hot(class0, 2)), ConfigError);
    }

    TEST_CASE("one_hot rejects out-of-range labels") {
        const std::vector<int> bad{2};
        CHECK_THROWS_AS(one_hot(bad, 2), ConfigError);
    }
}

TEST_SUITE("dense") {
    TEST_CASE("identity activation gradient is input transpose times upstream") {
        std::mt19937_64 gen(21);
        const Tensor x = oracle::random_tensor({3, 4}, gen), w = oracle::random_tensor({2, 4}, gen);
        const Tensor up = oracle::random_tensor({3, 2}, gen);
        const DenseGrads g = dense_backward(x, w, up);
        for (std::size_t o = 0; o < 2; ++o)
            for (std::size_t d = 0; d < 4; ++d) {
                double want = 0;
                for (std::size_t n = 0; n < 3; ++n) want += up.at({n, o}) * x.at({n, d});
                CHECK(g.weight.at({o, d}) == doctest::Approx(want).epsilon(1e-12));
            }
        for (std::size_t o = 0; o < 2; ++o) CHECK(g.bias[o] == doctest::Approx(up.at({0, o}) + up.at({1, o}) + up.at({2, o})));
    }
}

TEST_SUITE("dropout") {
    TEST_CASE("rate 0 is the identity with an all-ones mask") {
        std::mt19937_64 gen(1);
        const Tensor x = oracle::random_tensor({10, 10}, gen);
        Rng rng(4);
        const DropoutResult d = dropout(x, 0.0, rng);
        CHECK(d.output == x);
        for (double m : d.mask.values()) CHECK(m == 1.0);
    }

    TEST_CASE("kept fraction at rate 0.5") {
        Rng rng(77);
        const DropoutResult d = dropout(Tensor({1000000}, 1.0), 0.5, rng);
        const double kept = std::accumulate(d.mask.values().begin(), d.mask.values().end(), 0.0) / 1e6;
        CHECK(std::abs(kept - 0.5) < 0.01);
        for (std::size_t i = 0; i < d.output.size(); ++i) CHECK(d.output[i] == d.mask[i] * 2.0);
    }

    TEST_CASE("expectation is preserved at rate 0.25") {
        std::mt19937_64 gen(8);
        const Tensor x = oracle::random_tensor({1000000}, gen, 0.0, 2.0);
        Rng rng(78);
        const DropoutResult d = dropout(x, 0.25, rng);
        const double in = std::accumulate(x.values().begin(), x.values().end(), 0.0);
        const double out = std::accumulate(d.output.values().begin(), d.output.values().end(), 0.0);
        CHECK(std::abs(out / in - 1.0) < 0.01);
    }

    TEST_CASE("rate 1 or above is a configuration error") {
        Rng rng(1);
        CHECK_THROWS_AS(dropout(Tensor({3}), 1.0, rng), ConfigError);
        CHECK_THROWS_AS(dropout(Tensor({3}), -0.1, rng), ConfigError);
    }
}
