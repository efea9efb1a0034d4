#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "../support/builders.hpp"
#include "monas/kde.hpp"

using namespace monas;

namespace {
constexpr double kSqrt2Pi = 2.5066282746310005024;
}

TEST_CASE("single-point kde evaluates to the kernel peak", "[kde]") {
    const auto kde = fit_kde({{0.7}});
    REQUIRE(kde.bandwidth.size() == 1);
    const double h = kde.bandwidth[0];
    CHECK(h == kKdeBandwidthFloor);  // no spread, floor applies
    CHECK(kde.density({0.7}) == Catch::Approx(1.0 / (h * kSqrt2Pi)).epsilon(1e-12));
}

TEST_CASE("density integrates to one", "[kde]") {
    // Quadrature oracle: trapezoid rule over a wide interval.
    const auto kde = fit_kde({{0.3}, {1.2}, {-0.7}});
    const double lo = -15.0, hi = 15.0, step = 0.005;
    double integral = 0.0;
    double prev = kde.density({lo});
    for (double x = lo + step; x <= hi; x += step) {
        const double cur = kde.density({x});
        integral += 0.5 * (prev + cur) * step;
        prev = cur;
    }
    CHECK(integral == Catch::Approx(1.0).margin(1e-2));
}

TEST_CASE("two-point kde matches the analytic kernel sum", "[kde]") {
    const double a = 3.0, b = 1003.0;  // far separated in raw space
    const auto kde = fit_kde({{a}, {b}});
    // Independent derivation: z-scores are +-1/sqrt(2) (sample std), so the
    // z-distance is sqrt(2) whatever the raw separation; the bandwidth is the
    // normal reference rate for n=2, d=1.
    const double h = std::pow(4.0 / (3.0 * 2.0), 0.2);
    CHECK(kde.bandwidth[0] == Catch::Approx(h).epsilon(1e-12));
    const double sd = (b - a) / std::sqrt(2.0);  // sample std of two points
    const double peak = 1.0 / (h * kSqrt2Pi);
    const double cross = peak * std::exp(-0.5 * 2.0 / (h * h));
    const double expected = 0.5 * (peak + cross) / sd;
    CHECK(kde.density({a}) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(kde.density({b}) == Catch::Approx(expected).epsilon(1e-12));

    // With the bandwidth tied to the sample spread, two lone points keep a
    // fixed overlap; clustered populations realize the "half the single-point
    // value" picture sharply.
    std::vector<std::vector<double>> clusters;
    for (int i = 0; i < 5; ++i) clusters.push_back({0.0 + 1e-9 * i});
    for (int i = 0; i < 5; ++i) clusters.push_back({100.0 + 1e-9 * i});
    const auto kde10 = fit_kde(clusters);
    const double self = 1.0 / (kde10.bandwidth[0] * kSqrt2Pi);
    const double at_cluster = kde10.density({0.0});
    const double single_equiv = self / (kde10.stddev[0]);
    CHECK(at_cluster == Catch::Approx(0.5 * single_equiv).epsilon(0.05));
}

TEST_CASE("degenerate dimensions fall back to floors instead of failing", "[kde]") {
    const auto kde = fit_kde({{1.0, 5.0}, {2.0, 5.0}, {3.0, 5.0}});  // dim 1 has zero variance
    CHECK(kde.stddev[1] == 1.0);
    CHECK(kde.bandwidth[1] == kKdeBandwidthFloor);
    CHECK(kde.density({2.0, 5.0}) > 0.0);
    // Far off the degenerate plane the density floor keeps values positive.
    CHECK(kde.density({2.0, 9.0}) >= kKdeDensityFloor);
}

TEST_CASE("parent probabilities invert densities exactly", "[kde]") {
    const auto p = inverse_density_probs({0.2, 0.8});
    REQUIRE(p.size() == 2);
    CHECK(p[0] == Catch::Approx(0.8).epsilon(1e-12));
    CHECK(p[1] == Catch::Approx(0.2).epsilon(1e-12));

    const auto q = inverse_density_probs({0.1, 0.4});
    CHECK(q[0] == Catch::Approx(0.8).epsilon(1e-12));
    CHECK(q[1] == Catch::Approx(0.2).epsilon(1e-12));

    const auto u = inverse_density_probs({0.37, 0.37, 0.37, 0.37});
    for (double v : u) CHECK(v == Catch::Approx(0.25).epsilon(1e-12));

    CHECK(inverse_density_probs({0.123}) == std::vector<double>{1.0});
}

TEST_CASE("inverse-density ratio identity holds on random sets", "[kde]") {
    Rng rng(777);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(30));
        std::vector<double> densities(n);
        for (auto& d : densities) d = std::exp(rng.uniform(-20.0, 3.0));
        const auto p = inverse_density_probs(densities);
        double sum = 0.0;
        for (double v : p) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        for (int k = 0; k < 5; ++k) {
            const auto i = rng.uniform_int(n);
            const auto j = rng.uniform_int(n);
            const double lhs = p[i] / p[j];
            const double rhs = densities[j] / densities[i];
            CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
        }
    }
}

TEST_CASE("acceptance sampling without replacement selects exact counts", "[kde]") {
    Rng rng(31);
    std::vector<double> probs{0.5, 0.2, 0.2, 0.05, 0.05};
    const auto all = sample_without_replacement(probs, 9, rng);
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});

    const auto three = sample_without_replacement(probs, 3, rng);
    CHECK(three.size() == 3);
    for (std::size_t i = 1; i < three.size(); ++i) CHECK(three[i] > three[i - 1]);

    Rng r1(9), r2(9);
    CHECK(sample_without_replacement(probs, 2, r1) == sample_without_replacement(probs, 2, r2));
}
