#pragma once

// Fixed layer vocabulary of the search space, together with per-layer
// parameter schemas, shape inference, and single-layer evaluation.
//
// Learnable parameters live outside the layer descriptors in a WeightStore
// (see weights.hpp); a descriptor only carries the structural fields needed
// to infer shapes. AddJoin computes (1-lambda)*x + lambda*y where x is the
// first input; lambda is a learnable scalar stored with the node's weights.
// SoftmaxHead marks the classifier output and passes logits through
// unchanged; the softmax itself is folded into the loss (loss.hpp) and into
// argmax-based evaluation, both of which are invariant to it.

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "monas/error.hpp"
#include "monas/kernels.hpp"
#include "monas/tensor.hpp"

namespace monas {

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

struct InputLayer {
    bool operator==(const InputLayer&) const = default;
};
struct Conv2d {
    int kernel = 3;
    int stride = 1;
    int out_channels = 1;
    bool has_bias = true;
    bool operator==(const Conv2d&) const = default;
};
struct SeparableConv2d {
    int kernel = 3;
    int stride = 1;
    int out_channels = 1;
    bool has_bias = true;
    bool operator==(const SeparableConv2d&) const = default;
};
struct Dense {
    int out_units = 1;
    bool has_bias = true;
    bool operator==(const Dense&) const = default;
};
struct BatchNorm {
    bool operator==(const BatchNorm&) const = default;
};
struct Relu {
    bool operator==(const Relu&) const = default;
};
struct MaxPool {
    int kernel = 2;
    int stride = 2;
    bool operator==(const MaxPool&) const = default;
};
struct GlobalAvgPool {
    bool operator==(const GlobalAvgPool&) const = default;
};
struct SoftmaxHead {
    bool operator==(const SoftmaxHead&) const = default;
};
struct AddJoin {
    bool operator==(const AddJoin&) const = default;
};
struct ConcatJoin {
    bool operator==(const ConcatJoin&) const = default;
};

using LayerKind = std::variant<InputLayer, Conv2d, SeparableConv2d, Dense, BatchNorm, Relu,
                               MaxPool, GlobalAvgPool, SoftmaxHead, AddJoin, ConcatJoin>;

inline const char* kind_name(const LayerKind& kind) {
    struct V {
        const char* operator()(const InputLayer&) { return "input"; }
        const char* operator()(const Conv2d&) { return "conv2d"; }
        const char* operator()(const SeparableConv2d&) { return "separable_conv2d"; }
        const char* operator()(const Dense&) { return "dense"; }
        const char* operator()(const BatchNorm&) { return "batch_norm"; }
        const char* operator()(const Relu&) { return "relu"; }
        const char* operator()(const MaxPool&) { return "max_pool"; }
        const char* operator()(const GlobalAvgPool&) { return "global_avg_pool"; }
        const char* operator()(const SoftmaxHead&) { return "softmax_head"; }
        const char* operator()(const AddJoin&) { return "add_join"; }
        const char* operator()(const ConcatJoin&) { return "concat_join"; }
    };
    return std::visit(V{}, kind);
}

inline bool is_join(const LayerKind& kind) {
    return std::holds_alternative<AddJoin>(kind) || std::holds_alternative<ConcatJoin>(kind);
}

inline bool is_conv_like(const LayerKind& kind) {
    return std::holds_alternative<Conv2d>(kind) || std::holds_alternative<SeparableConv2d>(kind);
}

// ---------------------------------------------------------------------------
// Parameter schema
// ---------------------------------------------------------------------------

struct ParamSpec {
    std::string name;
    Shape shape;
    bool learnable = true;
};

/// Parameter schema for a layer given the channel/feature count of its input.
/// Layers without parameters return an empty list.
inline std::vector<ParamSpec> param_specs(const LayerKind& kind, int in_channels) {
    std::vector<ParamSpec> specs;
    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        specs.push_back({"weight", {c->out_channels, in_channels, c->kernel, c->kernel}, true});
        if (c->has_bias) specs.push_back({"bias", {c->out_channels}, true});
    } else if (const auto* s = std::get_if<SeparableConv2d>(&kind)) {
        specs.push_back({"depthwise", {in_channels, 1, s->kernel, s->kernel}, true});
        specs.push_back({"pointwise", {s->out_channels, in_channels, 1, 1}, true});
        if (s->has_bias) specs.push_back({"bias", {s->out_channels}, true});
    } else if (const auto* d = std::get_if<Dense>(&kind)) {
        specs.push_back({"weight", {d->out_units, in_channels}, true});
        if (d->has_bias) specs.push_back({"bias", {d->out_units}, true});
    } else if (std::holds_alternative<BatchNorm>(kind)) {
        specs.push_back({"scale", {in_channels}, true});
        specs.push_back({"shift", {in_channels}, true});
        specs.push_back({"moving_mean", {in_channels}, false});
        specs.push_back({"moving_var", {in_channels}, false});
    } else if (std::holds_alternative<AddJoin>(kind)) {
        specs.push_back({"lambda", {1}, true});
    }
    return specs;
}

// ---------------------------------------------------------------------------
// Shape inference
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void shape_error(const LayerKind& kind, const std::string& what) {
    throw Error("shape_mismatch", std::string(kind_name(kind)) + ": " + what);
}

inline void expect_rank(const LayerKind& kind, const Shape& s, std::size_t rank) {
    if (s.size() != rank)
        shape_error(kind, "expected rank-" + std::to_string(rank) + " input, got " + shape_str(s));
}

}  // namespace detail

/// Output shape of a layer as a function of input shapes alone. Throws
/// Error("shape_mismatch") when the inputs are incompatible with the kind, so
/// graph validation can report shape problems without any weights.
inline Shape infer_output_shape(const LayerKind& kind, const std::vector<Shape>& inputs) {
    const std::size_t arity = inputs.size();
    if (is_join(kind)) {
        if (arity < 2) detail::shape_error(kind, "join needs >= 2 inputs");
    } else if (!std::holds_alternative<InputLayer>(kind) && arity != 1) {
        detail::shape_error(kind, "expected exactly 1 input, got " + std::to_string(arity));
    }

    if (std::holds_alternative<InputLayer>(kind)) {
        if (arity != 1) detail::shape_error(kind, "input node carries one tensor");
        return inputs[0];
    }
    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        detail::expect_rank(kind, inputs[0], 4);
        if (c->kernel % 2 == 0) detail::shape_error(kind, "even kernel not supported");
        const int oh = conv_out_dim(inputs[0][2], c->kernel, c->stride);
        const int ow = conv_out_dim(inputs[0][3], c->kernel, c->stride);
        if (oh < 1 || ow < 1)
            detail::shape_error(kind, "spatial input " + shape_str(inputs[0]) + " too small");
        return {inputs[0][0], c->out_channels, oh, ow};
    }
    if (const auto* s = std::get_if<SeparableConv2d>(&kind)) {
        detail::expect_rank(kind, inputs[0], 4);
        if (s->kernel % 2 == 0) detail::shape_error(kind, "even kernel not supported");
        const int oh = conv_out_dim(inputs[0][2], s->kernel, s->stride);
        const int ow = conv_out_dim(inputs[0][3], s->kernel, s->stride);
        if (oh < 1 || ow < 1)
            detail::shape_error(kind, "spatial input " + shape_str(inputs[0]) + " too small");
        return {inputs[0][0], s->out_channels, oh, ow};
    }
    if (const auto* d = std::get_if<Dense>(&kind)) {
        detail::expect_rank(kind, inputs[0], 2);
        return {inputs[0][0], d->out_units};
    }
    if (std::holds_alternative<BatchNorm>(kind)) {
        detail::expect_rank(kind, inputs[0], 4);
        return inputs[0];
    }
    if (std::holds_alternative<Relu>(kind)) return inputs[0];
    if (const auto* p = std::get_if<MaxPool>(&kind)) {
        detail::expect_rank(kind, inputs[0], 4);
        if (inputs[0][2] < p->kernel || inputs[0][3] < p->kernel)
            detail::shape_error(kind, "window " + std::to_string(p->kernel) +
                                          " exceeds input " + shape_str(inputs[0]));
        return {inputs[0][0], inputs[0][1], pool_out_dim(inputs[0][2], p->kernel, p->stride),
                pool_out_dim(inputs[0][3], p->kernel, p->stride)};
    }
    if (std::holds_alternative<GlobalAvgPool>(kind)) {
        detail::expect_rank(kind, inputs[0], 4);
        return {inputs[0][0], inputs[0][1]};
    }
    if (std::holds_alternative<SoftmaxHead>(kind)) {
        detail::expect_rank(kind, inputs[0], 2);
        return inputs[0];
    }
    if (std::holds_alternative<AddJoin>(kind)) {
        for (std::size_t i = 1; i < arity; ++i)
            if (inputs[i] != inputs[0])
                detail::shape_error(kind, "inputs " + shape_str(inputs[0]) + " vs " +
                                              shape_str(inputs[i]) + " differ");
        if (arity != 2) detail::shape_error(kind, "takes exactly 2 inputs");
        return inputs[0];
    }
    // ConcatJoin: equal batch and spatial dims, channels accumulate.
    const auto& first = inputs[0];
    detail::expect_rank(kind, first, 4);
    int channels = first[1];
    for (std::size_t i = 1; i < arity; ++i) {
        detail::expect_rank(kind, inputs[i], 4);
        if (inputs[i][0] != first[0] || inputs[i][2] != first[2] || inputs[i][3] != first[3])
            detail::shape_error(kind, "inputs " + shape_str(first) + " vs " +
                                          shape_str(inputs[i]) + " differ in batch/spatial dims");
        channels += inputs[i][1];
    }
    return {first[0], channels, first[2], first[3]};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class Mode { Train, Infer };

using ParamMap = std::map<std::string, Tensor>;

/// Per-layer scratch saved by the forward pass for the matching backward.
struct LayerAux {
    BatchNormCache bn;
    std::vector<std::int32_t> argmax;
};

namespace detail {

inline const Tensor& require_param(const LayerKind& kind, const ParamMap& params,
                                   const std::string& name) {
    auto it = params.find(name);
    if (it == params.end())
        throw Error("missing_weights",
                    std::string(kind_name(kind)) + ": missing parameter '" + name + "'");
    return it->second;
}

inline const Tensor* optional_param(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    return it == params.end() ? nullptr : &it->second;
}

inline void check_conv_weights(const LayerKind& kind, const Tensor& weight, int in_channels) {
    if (weight.rank() != 4 || weight.dim(1) != in_channels)
        shape_error(kind, "weight " + shape_str(weight.shape()) + " incompatible with " +
                              std::to_string(in_channels) + " input channels");
}

}  // namespace detail

/// Evaluate one layer. `params` is mutable because BatchNorm updates its
/// moving statistics in train mode; everything else is read-only. When `aux`
/// is given, the pieces needed by the backward pass are saved into it.
inline Tensor eval_layer(const LayerKind& kind, ParamMap& params,
                         const std::vector<const Tensor*>& inputs, Mode mode,
                         LayerAux* aux = nullptr) {
    std::vector<Shape> in_shapes;
    in_shapes.reserve(inputs.size());
    for (const Tensor* t : inputs) in_shapes.push_back(t->shape());
    infer_output_shape(kind, in_shapes);  // throws on structural mismatch

    if (std::holds_alternative<InputLayer>(kind) || std::holds_alternative<SoftmaxHead>(kind))
        return *inputs[0];

    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        const Tensor& weight = detail::require_param(kind, params, "weight");
        detail::check_conv_weights(kind, weight, inputs[0]->dim(1));
        const Tensor* bias = c->has_bias ? &detail::require_param(kind, params, "bias") : nullptr;
        return conv2d_forward(*inputs[0], weight, bias, c->stride);
    }
    if (const auto* s = std::get_if<SeparableConv2d>(&kind)) {
        const Tensor& dw = detail::require_param(kind, params, "depthwise");
        const Tensor& pw = detail::require_param(kind, params, "pointwise");
        detail::check_conv_weights(kind, pw, inputs[0]->dim(1));
        if (dw.dim(0) != inputs[0]->dim(1))
            detail::shape_error(kind, "depthwise " + shape_str(dw.shape()) +
                                          " incompatible with input " + shape_str(inputs[0]->shape()));
        const Tensor* bias = s->has_bias ? &detail::require_param(kind, params, "bias") : nullptr;
        Tensor mid = depthwise_forward(*inputs[0], dw, s->stride);
        return conv2d_forward(mid, pw, bias, 1);
    }
    if (const auto* d = std::get_if<Dense>(&kind)) {
        const Tensor& weight = detail::require_param(kind, params, "weight");
        if (weight.dim(1) != inputs[0]->dim(1))
            detail::shape_error(kind, "weight " + shape_str(weight.shape()) +
                                          " incompatible with input " + shape_str(inputs[0]->shape()));
        const Tensor* bias = d->has_bias ? &detail::require_param(kind, params, "bias") : nullptr;
        return dense_forward(*inputs[0], weight, bias);
    }
    if (std::holds_alternative<BatchNorm>(kind)) {
        const Tensor& scale = detail::require_param(kind, params, "scale");
        const Tensor& shift = detail::require_param(kind, params, "shift");
        Tensor& mm = params.at("moving_mean");
        Tensor& mv = params.at("moving_var");
        if (static_cast<int>(scale.numel()) != inputs[0]->dim(1))
            detail::shape_error(kind, "scale " + shape_str(scale.shape()) +
                                          " incompatible with input " + shape_str(inputs[0]->shape()));
        return batchnorm_forward(*inputs[0], scale, shift, mm, mv, mode == Mode::Train,
                                 kBatchNormMomentum, kBatchNormEpsilon, aux ? &aux->bn : nullptr);
    }
    if (std::holds_alternative<Relu>(kind)) {
        Tensor out(*inputs[0]);
        for (auto& v : out.vec()) v = v > 0.0 ? v : 0.0;
        return out;
    }
    if (const auto* p = std::get_if<MaxPool>(&kind))
        return maxpool_forward(*inputs[0], p->kernel, p->stride, aux ? &aux->argmax : nullptr);
    if (std::holds_alternative<GlobalAvgPool>(kind)) return global_avgpool_forward(*inputs[0]);
    if (std::holds_alternative<AddJoin>(kind)) {
        const double lambda = detail::require_param(kind, params, "lambda")[0];
        const Tensor& x = *inputs[0];
        const Tensor& y = *inputs[1];
        Tensor out(x.shape());
        const double a = 1.0 - lambda;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x[i] + lambda * y[i];
        return out;
    }
    // ConcatJoin
    const int batch = inputs[0]->dim(0), h = inputs[0]->dim(2), w = inputs[0]->dim(3);
    int channels = 0;
    for (const Tensor* t : inputs) channels += t->dim(1);
    Tensor out({batch, channels, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < batch; ++b) {
        std::size_t off = 0;
        for (const Tensor* t : inputs) {
            const std::size_t block = static_cast<std::size_t>(t->dim(1)) * plane;
            const double* src = t->data() + static_cast<std::size_t>(b) * block;
            double* dst = out.data() + static_cast<std::size_t>(b) * channels * plane + off;
            std::copy(src, src + block, dst);
            off += block;
        }
    }
    return out;
}

}  // namespace monas
