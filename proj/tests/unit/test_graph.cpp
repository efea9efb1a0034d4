#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "../support/builders.hpp"
#include "monas/graph.hpp"

using namespace monas;
using testsupport::make_chain;
using testsupport::small_convnet;

namespace {

bool has_violation(const std::vector<Violation>& v, const std::string& code) {
    return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.code == code; });
}

}  // namespace

TEST_CASE("trivial three-conv net validates clean", "[graph]") {
    const ArchGraph g = small_convnet();
    CHECK(validate(g, {3, 2}).empty());
}

TEST_CASE("too few convolutions is reported as min_convs", "[graph]") {
    ArchGraph g = make_chain(
        {InputLayer{}, Conv2d{3, 1, 4, true}, Relu{}, Conv2d{3, 1, 8, true}, Relu{},
         GlobalAvgPool{}, Dense{4, true}, SoftmaxHead{}},
        {1, 8, 8}, 4);
    const auto v = validate(g, {3, 2});
    REQUIRE_FALSE(v.empty());
    CHECK(has_violation(v, "min_convs"));
    CHECK(validate(g, {2, 2}).empty());
}

TEST_CASE("a bad skip edge forming a cycle is reported", "[graph]") {
    ArchGraph g = small_convnet();
    // Feed a later node's output back into an earlier join-free node.
    g.edges.push_back({9, 4, 1});   // conv3 output -> pool1 (also breaks arity)
    const auto v = validate(g);
    CHECK((has_violation(v, "cycle") || has_violation(v, "arity")));

    // A pure cycle between two fresh nodes.
    ArchGraph g2 = small_convnet();
    g2.edges.push_back({5, 2, 1});
    g2.edges[1] = {5, 1, 0};  // rewire so 1 <- 5 while 5 <- ... <- 1
    const auto v2 = validate(g2);
    CHECK_FALSE(v2.empty());
}

TEST_CASE("structural violations are machine readable", "[graph]") {
    ArchGraph g = small_convnet();
    g.nodes.erase(std::remove_if(g.nodes.begin(), g.nodes.end(),
                                 [](const GraphNode& n) {
                                     return std::holds_alternative<SoftmaxHead>(n.kind);
                                 }),
                  g.nodes.end());
    CHECK(has_violation(validate(g), "dangling_edge"));

    ArchGraph g2 = small_convnet();
    g2.edges.pop_back();  // head loses its input
    CHECK_FALSE(validate(g2).empty());

    ArchGraph g3 = small_convnet();
    g3.num_classes = 7;  // dense still emits 4 features
    CHECK(has_violation(validate(g3), "head_width"));
}

TEST_CASE("parameter counting matches hand counts", "[graph]") {
    // Conv2d 3x3, 4 -> 8 channels with bias: 3*3*4*8 + 8 = 296.
    ArchGraph conv;
    conv.input_spec = {4, 8, 8};
    conv.num_classes = 2;
    conv.nodes = {{0, InputLayer{}, std::nullopt}, {1, Conv2d{3, 1, 8, true}, std::nullopt}};
    conv.edges = {{0, 1, 0}};
    CHECK(count_params(conv) == 296);
    CHECK(count_macs(conv) == 8 * 8 * 9 * 4 * 8);  // 18432

    // Dense 16 -> 10 with bias: 170 params, 160 MACs.
    ArchGraph dense;
    dense.input_spec = {16, 4, 4};
    dense.num_classes = 10;
    dense.nodes = {{0, InputLayer{}, std::nullopt},
                   {1, GlobalAvgPool{}, std::nullopt},
                   {2, Dense{10, true}, std::nullopt}};
    dense.edges = {{0, 1, 0}, {1, 2, 0}};
    CHECK(count_params(dense) == 170);
    CHECK(count_macs(dense) == 160);

    // BatchNorm over 8 channels: scale + shift = 16 (moving stats excluded).
    ArchGraph bn;
    bn.input_spec = {8, 4, 4};
    bn.num_classes = 2;
    bn.nodes = {{0, InputLayer{}, std::nullopt}, {1, BatchNorm{}, std::nullopt}};
    bn.edges = {{0, 1, 0}};
    CHECK(count_params(bn) == 16);
    CHECK(count_macs(bn) == 0);

    // Pure pooling graph: zero MACs.
    ArchGraph pool;
    pool.input_spec = {4, 8, 8};
    pool.num_classes = 2;
    pool.nodes = {{0, InputLayer{}, std::nullopt},
                  {1, MaxPool{2, 2}, std::nullopt},
                  {2, GlobalAvgPool{}, std::nullopt}};
    pool.edges = {{0, 1, 0}, {1, 2, 0}};
    CHECK(count_macs(pool) == 0);

    // Separable conv: depthwise + pointwise summed.
    ArchGraph sep;
    sep.input_spec = {4, 8, 8};
    sep.num_classes = 2;
    sep.nodes = {{0, InputLayer{}, std::nullopt}, {1, SeparableConv2d{3, 1, 8, true}, std::nullopt}};
    sep.edges = {{0, 1, 0}};
    CHECK(count_params(sep) == 9 * 4 + 4 * 8 + 8);          // 76
    CHECK(count_macs(sep) == 64 * 4 * 9 + 64 * 8 * 4);      // depthwise + pointwise
}

TEST_CASE("count_params equals the element count of freshly initialized weights", "[graph]") {
    Rng rng(100);
    for (bool separable : {false, true}) {
        ArchGraph g = small_convnet(4, 8, 8, {1, 12, 12}, 4, separable);
        WeightStore w = init_weights(g, rng);
        CHECK(static_cast<std::size_t>(count_params(g)) == learnable_elements(g, w));
    }
}

TEST_CASE("shape algebra is total on validated graphs", "[graph]") {
    ArchGraph g = small_convnet();
    REQUIRE(validate(g).empty());
    const auto shapes = infer_shapes(g, 1);
    CHECK(shapes.at(*g.output_node()) == Shape{1, 4});
    // Pool halves 12 -> 6 -> 3.
    CHECK(shapes.at(4) == Shape{1, 4, 6, 6});
    CHECK(shapes.at(8) == Shape{1, 8, 3, 3});
}

TEST_CASE("validation accepts exactly what run_forward accepts", "[graph]") {
    Rng rng(200);
    // A batch conforming to the input spec succeeds on every valid graph.
    for (bool separable : {false, true}) {
        ArchGraph g = small_convnet(3, 6, 6, {2, 10, 10}, 3, separable);
        REQUIRE(validate(g, {3, 2}).empty());
        WeightStore w = init_weights(g, rng);
        Tensor batch = testsupport::random_tensor({2, 2, 10, 10}, rng, 0.0, 1.0);
        CHECK_NOTHROW(run_forward(g, w, batch, Mode::Infer));
    }
    // An invalid graph (shape break inside) fails validation and run_forward alike.
    ArchGraph bad = make_chain(
        {InputLayer{}, Conv2d{3, 1, 4, true}, MaxPool{4, 4}, MaxPool{4, 4}, GlobalAvgPool{},
         Dense{2, true}, SoftmaxHead{}},
        {1, 8, 8}, 2);
    CHECK_FALSE(validate(bad, {1, 1}).empty());
    Rng rng2(7);
    CHECK_THROWS(init_weights(bad, rng2));
}
