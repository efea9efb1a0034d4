#pragma once

// Shared helpers for tests: small graph builders, random tensors, and the
// central-difference gradient checker used as the oracle for every layer kind.

#include <functional>
#include <string>
#include <vector>

#include "monas/loss.hpp"
#include "monas/network.hpp"
#include "monas/rng.hpp"
#include "monas/weights.hpp"

namespace testsupport {

using namespace monas;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

/// Values bounded away from zero, so ReLU kinks and pooling ties stay clear
/// of finite-difference steps.
inline Tensor random_tensor_kink_free(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) {
        const double mag = rng.uniform(0.1, 1.0);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

/// Linear chain graph: kinds[0] must be InputLayer, kinds.back() SoftmaxHead.
inline ArchGraph make_chain(const std::vector<LayerKind>& kinds, InputSpec spec, int num_classes) {
    ArchGraph g;
    g.input_spec = spec;
    g.num_classes = num_classes;
    for (int i = 0; i < static_cast<int>(kinds.size()); ++i) {
        g.nodes.push_back({i, kinds[i], std::nullopt});
        if (i > 0) g.edges.push_back({i - 1, i, 0});
    }
    return g;
}

/// Conv-BatchNorm-ReLU x3 with intermittent pooling, then GAP/Dense/head.
/// The canonical small net used across the test suite.
inline ArchGraph small_convnet(int c1 = 4, int c2 = 8, int c3 = 8, InputSpec spec = {1, 12, 12},
                               int num_classes = 4, bool separable = false) {
    std::vector<LayerKind> kinds{InputLayer{}};
    auto conv = [&](int ch) -> LayerKind {
        if (separable) return SeparableConv2d{3, 1, ch, true};
        return Conv2d{3, 1, ch, true};
    };
    kinds.push_back(conv(c1));
    kinds.push_back(BatchNorm{});
    kinds.push_back(Relu{});
    kinds.push_back(MaxPool{2, 2});
    kinds.push_back(conv(c2));
    kinds.push_back(BatchNorm{});
    kinds.push_back(Relu{});
    kinds.push_back(MaxPool{2, 2});
    kinds.push_back(conv(c3));
    kinds.push_back(BatchNorm{});
    kinds.push_back(Relu{});
    kinds.push_back(GlobalAvgPool{});
    kinds.push_back(Dense{num_classes, true});
    kinds.push_back(SoftmaxHead{});
    return make_chain(kinds, spec, num_classes);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

struct FdReport {
    double worst_rel = 0.0;
    std::string worst_at;
};

/// Scalar projection loss sum(output .* probe) evaluated through eval_layer
/// with fresh parameter copies (train-mode BatchNorm mutates moving stats).
inline double layer_projection_loss(const LayerKind& kind, ParamMap params,
                                    const std::vector<Tensor>& inputs, Mode mode,
                                    const Tensor& probe) {
    std::vector<const Tensor*> ptrs;
    for (const auto& t : inputs) ptrs.push_back(&t);
    const Tensor out = eval_layer(kind, params, ptrs, mode);
    double loss = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) loss += out[i] * probe[i];
    return loss;
}

/// Central-difference check of backward_layer for one layer kind: every
/// learnable parameter element and every input element, h = 1e-5, relative
/// tolerance `tol` (with a small absolute floor for near-zero gradients).
inline FdReport fd_check_layer(const LayerKind& kind, const ParamMap& params,
                               const std::vector<Tensor>& inputs, Mode mode, Rng& rng,
                               double h = 1e-5) {
    std::vector<const Tensor*> ptrs;
    for (const auto& t : inputs) ptrs.push_back(&t);

    ParamMap fwd_params = params;
    LayerAux aux;
    const Tensor out = eval_layer(kind, fwd_params, ptrs, mode, &aux);
    Tensor probe(out.shape());
    for (auto& v : probe.vec()) v = rng.uniform(-1.0, 1.0);

    // Analytic gradients.
    std::vector<Tensor> grad_inputs;
    std::vector<Tensor*> grad_input_ptrs;
    for (const auto& t : inputs) grad_inputs.emplace_back(t.shape());
    for (auto& t : grad_inputs) grad_input_ptrs.push_back(&t);
    ParamMap grad_params;
    for (const auto& spec : param_specs(kind, inputs[0].shape().size() > 1 ? inputs[0].dim(1) : 1))
        if (spec.learnable) grad_params.emplace(spec.name, Tensor(spec.shape));
    backward_layer(kind, params, ptrs, out, aux, mode, probe, grad_input_ptrs, &grad_params);

    FdReport report;
    auto compare = [&](double analytic, double numeric, const std::string& where) {
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-4});
        if (rel > report.worst_rel) {
            report.worst_rel = rel;
            report.worst_at = where;
        }
    };

    for (auto& [name, gt] : grad_params) {
        for (std::size_t i = 0; i < gt.numel(); ++i) {
            ParamMap plus = params, minus = params;
            plus.at(name)[i] += h;
            minus.at(name)[i] -= h;
            const double lp = layer_projection_loss(kind, plus, inputs, mode, probe);
            const double lm = layer_projection_loss(kind, minus, inputs, mode, probe);
            compare(gt[i], (lp - lm) / (2.0 * h), name + "[" + std::to_string(i) + "]");
        }
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[k][i] += h;
            minus[k][i] -= h;
            const double lp = layer_projection_loss(kind, params, plus, mode, probe);
            const double lm = layer_projection_loss(kind, params, minus, mode, probe);
            compare(grad_inputs[k][i], (lp - lm) / (2.0 * h),
                    "input" + std::to_string(k) + "[" + std::to_string(i) + "]");
        }
    }
    return report;
}

}  // namespace testsupport
