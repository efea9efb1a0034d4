#include <catch2/catch_amalgamated.hpp>

#include "../support/builders.hpp"
#include "monas/serialize.hpp"
#include "monas/space.hpp"

using namespace monas;
using testsupport::small_convnet;

namespace {

/// Small net with a concat skip around the middle block and separable convs.
ArchGraph skip_net() {
    ArchGraph g;
    g.input_spec = {1, 12, 12};
    g.num_classes = 4;
    int id = 0;
    auto add = [&](LayerKind kind) {
        g.nodes.push_back({id, std::move(kind), std::nullopt});
        return id++;
    };
    const int in = add(InputLayer{});
    const int c1 = add(SeparableConv2d{3, 1, 6, true});
    const int r1 = add(Relu{});
    const int c2 = add(Conv2d{3, 1, 6, true});
    const int r2 = add(Relu{});
    const int cat = add(ConcatJoin{});
    const int c3 = add(Conv2d{3, 1, 8, false});
    const int r3 = add(Relu{});
    const int gap = add(GlobalAvgPool{});
    const int fc = add(Dense{4, true});
    const int head = add(SoftmaxHead{});
    g.edges = {{in, c1, 0}, {c1, r1, 0}, {r1, c2, 0}, {c2, r2, 0}, {r2, cat, 0},
               {r1, cat, 1}, {cat, c3, 0}, {c3, r3, 0}, {r3, gap, 0}, {gap, fc, 0},
               {fc, head, 0}};
    g.nodes[c2].cell = CellTag{0, 1};
    return g;
}

}  // namespace

TEST_CASE("architecture round trip is structural identity", "[serialize]") {
    for (const ArchGraph& g : {small_convnet(), skip_net()}) {
        const std::string text = serialize_architecture(g);
        const auto parsed = parse_architecture(text);
        CHECK(parsed.graph == g);
        CHECK_FALSE(parsed.weights.has_value());
    }
}

TEST_CASE("weights round trip bit exact", "[serialize]") {
    ArchGraph g = skip_net();
    Rng rng(404);
    WeightStore w = init_weights(g, rng);
    // Awkward values must survive exactly.
    w.param(1, "bias")[0] = 0x1.fffffffffffffp-1;
    w.param(1, "bias")[1] = -0.0;
    w.param(1, "bias")[2] = 1e-300;

    const std::string text = serialize_architecture(g, &w);
    const auto parsed = parse_architecture(text);
    REQUIRE(parsed.weights.has_value());
    CHECK(*parsed.weights == w);

    // Serialization is deterministic: same state, same bytes.
    CHECK(serialize_architecture(g, &w) == text);
}

TEST_CASE("distinct graphs serialize to distinct documents", "[serialize]") {
    const std::string a = serialize_architecture(small_convnet(4, 8, 8));
    const std::string b = serialize_architecture(small_convnet(4, 8, 9));
    CHECK(a != b);
}

TEST_CASE("truncated documents fail atomically", "[serialize]") {
    const std::string text = serialize_architecture(small_convnet());
    const std::string truncated = text.substr(0, text.size() / 2);
    try {
        parse_architecture(truncated);
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.code() == "parse");
    }
    CHECK_THROWS_AS(parse_architecture("not json at all {"), Error);
}

TEST_CASE("format version gates parsing", "[serialize]") {
    json doc = architecture_to_json(small_convnet());
    doc["format_version"] = 999;
    try {
        architecture_from_json(doc);
        FAIL("expected version error");
    } catch (const Error& e) {
        CHECK(e.code() == "version_mismatch");
    }
}

TEST_CASE("schema violations are parse errors", "[serialize]") {
    json doc = architecture_to_json(small_convnet());
    doc["nodes"][2]["kind"] = "warp_drive";
    CHECK_THROWS_AS(parse_architecture(doc.dump()), Error);

    json doc2 = architecture_to_json(small_convnet());
    doc2.erase("edges");
    CHECK_THROWS_AS(parse_architecture(doc2.dump()), Error);
}
