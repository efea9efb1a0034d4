#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "../support/builders.hpp"
#include "monas/loss.hpp"

using namespace monas;
using testsupport::random_tensor;

TEST_CASE("uniform logits give loss ln K", "[loss]") {
    for (int k : {2, 4, 7}) {
        Tensor logits = Tensor::full({3, k}, 0.37);
        std::vector<int> targets{0, k - 1, k / 2};
        const auto r = softmax_crossentropy(logits, targets);
        CHECK(r.loss == Catch::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
    }
}

TEST_CASE("soft target equal to softmax gives zero gradient", "[loss]") {
    Rng rng(21);
    Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
    Tensor soft = softmax_rows(logits);
    const auto r = softmax_crossentropy(logits, soft);
    for (double g : r.grad_logits.vec()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("loss matches an independently coded log-sum-exp evaluation", "[loss]") {
    // Naive direct evaluation, no max subtraction; logits kept small on purpose.
    Rng rng(33);
    Tensor logits = random_tensor({6, 4}, rng, -3.0, 3.0);
    std::vector<int> targets;
    for (int b = 0; b < 6; ++b) targets.push_back(static_cast<int>(rng.uniform_int(4)));

    double expected = 0.0;
    for (int b = 0; b < 6; ++b) {
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) sum += std::exp(logits.at2(b, k));
        expected += std::log(sum) - logits.at2(b, targets[b]);
    }
    expected /= 6.0;

    const auto r = softmax_crossentropy(logits, targets);
    CHECK(std::abs(r.loss - expected) < 1e-12);
    CHECK(r.loss >= 0.0);
}

TEST_CASE("gradient is softmax minus target over batch", "[loss]") {
    Rng rng(34);
    Tensor logits = random_tensor({3, 4}, rng, -1.0, 1.0);
    std::vector<int> targets{1, 3, 0};
    const auto r = softmax_crossentropy(logits, targets);
    Tensor probs = softmax_rows(logits);
    for (int b = 0; b < 3; ++b)
        for (int k = 0; k < 4; ++k) {
            const double t = k == targets[b] ? 1.0 : 0.0;
            CHECK(r.grad_logits.at2(b, k) == Catch::Approx((probs.at2(b, k) - t) / 3.0));
        }
}

TEST_CASE("invalid inputs are rejected", "[loss]") {
    Tensor logits({2, 3}, {0.0, 1.0, 2.0, 0.0, 1.0, std::nan("")});
    CHECK_THROWS_AS(softmax_crossentropy(logits, std::vector<int>{0, 1}), Error);

    Tensor ok({2, 3}, {0.0, 1.0, 2.0, 0.0, 1.0, 2.0});
    CHECK_THROWS_AS(softmax_crossentropy(ok, std::vector<int>{0, 3}), Error);  // label range
    CHECK_THROWS_AS(softmax_crossentropy(ok, std::vector<int>{0}), Error);     // count

    Tensor bad_soft = Tensor::full({2, 3}, 0.5);  // rows sum to 1.5
    CHECK_THROWS_AS(softmax_crossentropy(ok, bad_soft), Error);
}

TEST_CASE("kl distance is zero only at equality", "[loss]") {
    Rng rng(35);
    Tensor a = random_tensor({4, 5}, rng, -2.0, 2.0);
    CHECK(mean_kl_from_logits(a, a) == 0.0);

    Tensor b = a;
    b.at2(0, 0) += 0.5;
    CHECK(mean_kl_from_logits(a, b) > 0.0);

    // Invariance to per-row logit shifts (softmax property).
    Tensor c = a;
    for (int k = 0; k < 5; ++k) c.at2(1, k) += 3.0;
    CHECK(mean_kl_from_logits(a, c) < 1e-12);
}
