#include <catch2/catch_amalgamated.hpp>

#include "../support/builders.hpp"
#include "monas/space.hpp"

using namespace monas;

TEST_CASE("whole-net space starts from four valid nets of strictly increasing size", "[space]") {
    for (std::uint64_t seed : {1ULL, 99ULL}) {
        const auto members = init_trivial_population(SearchSpace::WholeNet, seed, {1, 12, 12}, 4);
        REQUIRE(members.size() == 4);
        std::int64_t prev = -1;
        for (const auto& m : members) {
            CHECK(validate(m.graph, {3, 2}).empty());
            const std::int64_t p = count_params(m.graph);
            CHECK(p > prev);
            prev = p;
            CHECK(static_cast<std::size_t>(p) == learnable_elements(m.graph, m.weights));
        }
        // Two plain, two separable.
        int plain = 0, separable = 0;
        for (const auto& m : members)
            for (const auto& n : m.graph.nodes) {
                plain += std::holds_alternative<Conv2d>(n.kind);
                separable += std::holds_alternative<SeparableConv2d>(n.kind);
            }
        CHECK(plain > 0);
        CHECK(separable > 0);
    }
}

TEST_CASE("identical seeds produce identical weights", "[space]") {
    const auto a = init_trivial_population(SearchSpace::WholeNet, 7, {1, 12, 12}, 4);
    const auto b = init_trivial_population(SearchSpace::WholeNet, 7, {1, 12, 12}, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].graph == b[i].graph);
        CHECK(a[i].weights == b[i].weights);
    }
    const auto c = init_trivial_population(SearchSpace::WholeNet, 8, {1, 12, 12}, 4);
    CHECK(a[0].weights != c[0].weights);
}

TEST_CASE("cell expansion instantiates every repeat with tags", "[space]") {
    const CellFragment cell = single_conv_cell(false, 16);
    const MacroSpec macro{{{2, false}, {2, true}}, 4, 16};
    const ArchGraph g = expand_cell(cell, macro, {1, 12, 12}, 4);

    CHECK(validate(g, {3, 2}).empty());
    CHECK(cell_instance_count(g) == 4);

    // Node count: input + stem(3) + 4 instances * 3 nodes + 1 pool + gap/dense/head.
    CHECK(g.nodes.size() == 1 + 3 + 4 * 3 + 1 + 3);

    // Every instance carries the same local structure.
    for (int inst = 0; inst < 4; ++inst) {
        int found = 0;
        for (const auto& n : g.nodes)
            if (n.cell && n.cell->instance == inst) ++found;
        CHECK(found == 3);
    }

    // Widths double across the downsampling boundary.
    std::vector<int> conv_widths;
    for (const auto& n : g.nodes)
        if (n.cell)
            if (const auto* c = std::get_if<Conv2d>(&n.kind)) conv_widths.push_back(c->out_channels);
    CHECK(conv_widths == std::vector<int>{8, 8, 16, 16});
}

TEST_CASE("degenerate macros are rejected", "[space]") {
    const CellFragment cell = single_conv_cell(false, 16);
    try {
        expand_cell(cell, MacroSpec{{}, 4, 16}, {1, 12, 12}, 4);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == "bad_macro");
    }
    // Odd width cannot be halved across the downsample boundary.
    try {
        expand_cell(single_conv_cell(false, 15), MacroSpec{{{1, false}, {1, true}}, 4, 15},
                    {1, 12, 12}, 4);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == "channel_mismatch");
    }
}

TEST_CASE("cell space starts from four valid nets of strictly increasing size", "[space]") {
    const auto members =
        init_trivial_population(SearchSpace::Cells, 5, {1, 12, 12}, 4, MacroSpec{});
    REQUIRE(members.size() == 4);
    std::int64_t prev = -1;
    for (const auto& m : members) {
        CHECK(validate(m.graph, {3, 2}).empty());
        CHECK(cell_instance_count(m.graph) == 4);
        const std::int64_t p = count_params(m.graph);
        CHECK(p > prev);
        prev = p;
    }
}
