#include <catch2/catch_amalgamated.hpp>

#include "../support/builders.hpp"
#include "monas/pareto.hpp"

using namespace monas;

namespace {

using Vecs = std::vector<std::vector<double>>;

/// Independent quadratic-time oracle: literal pairwise dominance plus the
/// earliest-born duplicate rule.
std::vector<std::size_t> brute_force_front(const Vecs& objs, const std::vector<std::uint64_t>& born) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < objs.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < objs.size() && ok; ++j) {
            if (i == j) continue;
            bool weakly = true, strictly = false;
            for (std::size_t k = 0; k < objs[i].size(); ++k) {
                if (objs[j][k] > objs[i][k]) weakly = false;
                if (objs[j][k] < objs[i][k]) strictly = true;
            }
            if (weakly && strictly) ok = false;
            if (objs[j] == objs[i] &&
                (born[j] < born[i] || (born[j] == born[i] && j < i)))
                ok = false;
        }
        if (ok) kept.push_back(i);
    }
    return kept;
}

/// Grid brute force for 2-D hypervolume: count dominated cell centers.
double grid_hypervolume(const Vecs& front, double rx, double ry, double res) {
    const int nx = static_cast<int>(rx / res);
    const int ny = static_cast<int>(ry / res);
    std::int64_t cells = 0;
    for (int ix = 0; ix < nx; ++ix) {
        const double x = (ix + 0.5) * res;
        double min_y = ry + 1.0;
        for (const auto& p : front)
            if (p[0] <= x) min_y = std::min(min_y, p[1]);
        if (min_y > ry) continue;
        for (int iy = 0; iy < ny; ++iy)
            if ((iy + 0.5) * res >= min_y) ++cells;
    }
    return static_cast<double>(cells) * res * res;
}

}  // namespace

TEST_CASE("dominance is strict and irreflexive", "[pareto]") {
    CHECK(dominates({1, 2}, {2, 3}));
    CHECK_FALSE(dominates({2, 3}, {1, 2}));
    CHECK_FALSE(dominates({1, 3}, {3, 1}));
    CHECK_FALSE(dominates({3, 1}, {1, 3}));
    CHECK_FALSE(dominates({1, 2}, {1, 2}));
    CHECK(dominates({1, 2}, {1, 3}));  // weakly equal first, strictly better second
    CHECK_THROWS_AS(dominates({1, 2}, {1, 2, 3}), Error);
}

TEST_CASE("front extraction matches the worked example", "[pareto]") {
    const Vecs objs{{1, 3}, {2, 2}, {3, 1}, {2, 3}};
    const auto kept = pareto_indices(objs);
    CHECK(kept == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("identical vectors keep only the earliest born", "[pareto]") {
    const Vecs objs{{1, 1}, {1, 1}, {1, 1}};
    const auto by_index = pareto_indices(objs);
    CHECK(by_index == std::vector<std::size_t>{0});
    const auto by_birth = pareto_indices(objs, {7, 3, 5});
    CHECK(by_birth == std::vector<std::size_t>{1});
}

TEST_CASE("front extraction equals brute force on random instances", "[pareto]") {
    Rng rng(314);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 20 + static_cast<int>(rng.uniform_int(180));
        const int d = 2 + static_cast<int>(rng.uniform_int(4));
        Vecs objs;
        std::vector<std::uint64_t> born;
        for (int i = 0; i < n; ++i) {
            std::vector<double> v(d);
            // quantized values induce duplicates and ties
            for (auto& x : v) x = std::floor(rng.uniform(0.0, 6.0));
            objs.push_back(std::move(v));
            born.push_back(rng.uniform_int(1000));
        }
        CHECK(pareto_indices(objs, born) == brute_force_front(objs, born));
    }
}

TEST_CASE("hypervolume matches hand values", "[pareto]") {
    CHECK(hypervolume({{1, 3}, {2, 2}, {3, 1}}, {4, 4}) == 6.0);
    CHECK(hypervolume({{1, 1}}, {2, 2}) == 1.0);
    // Adding a dominated point leaves the measure unchanged.
    CHECK(hypervolume({{1, 3}, {2, 2}, {3, 1}, {2.5, 2.5}}, {4, 4}) == 6.0);
    // Points outside the reference box contribute nothing.
    CHECK(hypervolume({{1, 1}, {5, 0.5}}, {2, 2}) == 1.0);
    CHECK(hypervolume({}, {2, 2}) == 0.0);

    // 3-D: two unit-offset boxes overlapping in one octant.
    CHECK(hypervolume({{1, 2, 1}, {2, 1, 1}}, {3, 3, 3}) == 6.0);
    CHECK(hypervolume({{1, 1, 1}}, {2, 2, 2}) == 1.0);
    CHECK_THROWS_AS(hypervolume({{1, 1, 1, 1}}, {2, 2, 2, 2}), Error);
}

TEST_CASE("hypervolume sweep agrees with a grid oracle", "[pareto]") {
    Rng rng(55);
    for (int trial = 0; trial < 6; ++trial) {
        Vecs front;
        const int m = 3 + static_cast<int>(rng.uniform_int(8));
        for (int i = 0; i < m; ++i)
            front.push_back({rng.uniform(0.2, 3.8), rng.uniform(0.2, 3.8)});
        const double exact = hypervolume(front, {4, 4});
        const double grid = grid_hypervolume(front, 4.0, 4.0, 1e-3);
        CHECK(std::abs(exact - grid) < 1e-2);
    }
}
