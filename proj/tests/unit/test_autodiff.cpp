#include <catch2/catch_amalgamated.hpp>

#include "../support/builders.hpp"
#include "monas/loss.hpp"
#include "monas/network.hpp"

using namespace monas;
using testsupport::fd_check_layer;
using testsupport::random_tensor;
using testsupport::random_tensor_kink_free;
using testsupport::small_convnet;

namespace {

ParamMap make_params(const LayerKind& kind, int in_channels, Rng& rng) {
    return init_node_params(kind, in_channels, rng);
}

}  // namespace

TEST_CASE("every layer kind passes the central finite-difference check", "[autodiff]") {
    Rng rng(1234);
    const double tol = 1e-3;

    auto run = [&](const LayerKind& kind, std::vector<Tensor> inputs, Mode mode) {
        ParamMap params = make_params(kind, inputs[0].rank() > 1 ? inputs[0].dim(1) : 1, rng);
        // Exercise non-default lambda so both branch gradients are non-trivial.
        if (params.count("lambda")) params.at("lambda")[0] = rng.uniform(-0.5, 0.5);
        const auto report = fd_check_layer(kind, params, inputs, mode, rng);
        INFO(kind_name(kind) << " worst " << report.worst_rel << " at " << report.worst_at);
        CHECK(report.worst_rel < tol);
    };

    run(Conv2d{3, 1, 3, true}, {random_tensor({2, 2, 5, 5}, rng)}, Mode::Infer);
    run(Conv2d{3, 2, 4, false}, {random_tensor({1, 3, 7, 7}, rng)}, Mode::Infer);
    run(SeparableConv2d{3, 1, 4, true}, {random_tensor({2, 3, 5, 5}, rng)}, Mode::Infer);
    run(Dense{4, true}, {random_tensor({3, 6}, rng)}, Mode::Infer);
    run(BatchNorm{}, {random_tensor({3, 2, 4, 4}, rng)}, Mode::Train);
    run(BatchNorm{}, {random_tensor({3, 2, 4, 4}, rng)}, Mode::Infer);
    run(Relu{}, {random_tensor_kink_free({2, 3, 4, 4}, rng)}, Mode::Infer);
    run(MaxPool{2, 2}, {random_tensor({2, 2, 6, 6}, rng)}, Mode::Infer);
    run(GlobalAvgPool{}, {random_tensor({2, 3, 4, 4}, rng)}, Mode::Infer);
    run(SoftmaxHead{}, {random_tensor({3, 4}, rng)}, Mode::Infer);
    run(AddJoin{}, {random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)},
        Mode::Infer);
    run(ConcatJoin{},
        {random_tensor({2, 2, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng),
         random_tensor({2, 1, 4, 4}, rng)},
        Mode::Infer);
}

TEST_CASE("dense gradient for one example is the outer product", "[autodiff]") {
    Rng rng(5);
    Tensor x = random_tensor({1, 5}, rng);
    const LayerKind kind = Dense{3, true};
    ParamMap params = make_params(kind, 5, rng);
    ParamMap fwd = params;
    std::vector<const Tensor*> ins{&x};
    LayerAux aux;
    Tensor out = eval_layer(kind, fwd, ins, Mode::Infer, &aux);

    Tensor upstream = random_tensor(out.shape(), rng);
    ParamMap grads;
    grads.emplace("weight", Tensor({3, 5}));
    grads.emplace("bias", Tensor({3}));
    Tensor gx({1, 5});
    std::vector<Tensor*> gins{&gx};
    backward_layer(kind, params, ins, out, aux, Mode::Infer, upstream, gins, &grads);

    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j)
            CHECK(grads.at("weight").at2(i, j) == Catch::Approx(x.at2(0, j) * upstream.at2(0, i)));
}

TEST_CASE("zero upstream gradient yields zero parameter gradients", "[autodiff]") {
    ArchGraph g = small_convnet();
    Rng rng(6);
    WeightStore w = init_weights(g, rng);
    Tensor batch = random_tensor({2, 1, 12, 12}, rng, 0.0, 1.0);

    ForwardTrace trace;
    Tensor logits = run_forward(g, w, batch, Mode::Train, &trace);
    WeightStore grads = run_backward(g, w, trace, Tensor(logits.shape()));
    for (const auto& [id, params] : grads.nodes)
        for (const auto& [name, t] : params)
            for (double v : t.vec()) REQUIRE(v == 0.0);
}

TEST_CASE("backward without a cached forward is rejected", "[autodiff]") {
    ArchGraph g = small_convnet();
    Rng rng(8);
    WeightStore w = init_weights(g, rng);

    ForwardTrace empty;
    try {
        run_backward(g, w, empty, Tensor({2, 4}));
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == "no_forward");
    }

    // A trace from a different graph must be rejected as well.
    ArchGraph g2 = small_convnet(6, 6, 6);
    Rng rng2(8);
    WeightStore w2 = init_weights(g2, rng2);
    ForwardTrace trace;
    Tensor batch = random_tensor({1, 1, 12, 12}, rng2, 0.0, 1.0);
    run_forward(g2, w2, batch, Mode::Infer, &trace);
    CHECK_THROWS_AS(run_backward(g, w, trace, Tensor({1, 4})), Error);
}

TEST_CASE("whole-network gradients match finite differences on sampled weights", "[autodiff]") {
    ArchGraph g = small_convnet(3, 4, 4, {1, 8, 8}, 3);
    Rng rng(77);
    WeightStore w = init_weights(g, rng);
    Tensor batch = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    std::vector<int> labels{0, 2};

    auto loss_at = [&](const WeightStore& ws) {
        WeightStore copy = ws;
        Tensor logits = run_forward(g, copy, batch, Mode::Infer);
        return softmax_crossentropy(logits, labels).loss;
    };

    ForwardTrace trace;
    Tensor logits = run_forward(g, w, batch, Mode::Infer, &trace);
    const auto loss = softmax_crossentropy(logits, labels);
    WeightStore grads = run_backward(g, w, trace, loss.grad_logits);

    const double h = 1e-5;
    int checked = 0;
    for (auto& [id, params] : grads.nodes) {
        for (auto& [name, gt] : params) {
            const std::size_t stride = std::max<std::size_t>(1, gt.numel() / 5);
            for (std::size_t i = 0; i < gt.numel(); i += stride) {
                WeightStore plus = w, minus = w;
                plus.param(id, name)[i] += h;
                minus.param(id, name)[i] -= h;
                const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
                const double rel = std::abs(gt[i] - numeric) /
                                   std::max({std::abs(gt[i]), std::abs(numeric), 1e-4});
                INFO("node " << id << " " << name << "[" << i << "]");
                CHECK(rel < 1e-3);
                ++checked;
            }
        }
    }
    CHECK(checked > 20);
}
