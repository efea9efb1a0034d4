#pragma once

// Whole-network forward evaluation and reverse-mode gradients over the fixed
// layer vocabulary. run_forward records a trace (per-node outputs plus layer
// scratch); run_backward replays it in reverse through backward_layer and
// accumulates one gradient tensor per learnable parameter.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "monas/graph.hpp"
#include "monas/weights.hpp"

namespace monas {

struct ForwardTrace {
    Mode mode = Mode::Infer;
    std::size_t graph_stamp = 0;
    Shape batch_shape;
    std::map<int, Tensor> outputs;  // includes the input node's batch
    std::map<int, LayerAux> aux;
    bool complete = false;
};

namespace detail {

inline std::size_t graph_stamp(const ArchGraph& graph) {
    auto mix = [](std::size_t h, std::size_t v) {
        return (h ^ (v + 0x9e3779b97f4a7c15ULL)) * 1099511628211ULL;
    };
    std::size_t h = mix(graph.nodes.size(), graph.edges.size());
    h = mix(h, static_cast<std::size_t>(graph.input_spec.channels * 1000 +
                                        graph.input_spec.height * 100 + graph.input_spec.width));
    h = mix(h, static_cast<std::size_t>(graph.num_classes));
    for (const auto& n : graph.nodes) {
        h = mix(h, static_cast<std::size_t>(n.id));
        h = mix(h, n.kind.index());
        if (const auto* c = std::get_if<Conv2d>(&n.kind))
            h = mix(h, static_cast<std::size_t>(c->kernel * 100000 + c->stride * 10000 +
                                                c->out_channels * 2 + c->has_bias));
        else if (const auto* s = std::get_if<SeparableConv2d>(&n.kind))
            h = mix(h, static_cast<std::size_t>(s->kernel * 100000 + s->stride * 10000 +
                                                s->out_channels * 2 + s->has_bias));
        else if (const auto* d = std::get_if<Dense>(&n.kind))
            h = mix(h, static_cast<std::size_t>(d->out_units * 2 + d->has_bias));
        else if (const auto* p = std::get_if<MaxPool>(&n.kind))
            h = mix(h, static_cast<std::size_t>(p->kernel * 100 + p->stride));
    }
    for (const auto& e : graph.edges) {
        h = mix(h, static_cast<std::size_t>(e.src));
        h = mix(h, static_cast<std::size_t>(e.dst * 7 + e.port));
    }
    return h;
}

}  // namespace detail

/// Reverse step for one layer. `grad_inputs[i]`, when non-null, receives the
/// accumulated gradient w.r.t. inputs[i]; `grad_params`, when non-null, must
/// hold zero-or-accumulated tensors for the layer's learnable parameters.
/// `output` and `aux` are the values the forward pass produced for this node.
inline void backward_layer(const LayerKind& kind, const ParamMap& params,
                           const std::vector<const Tensor*>& inputs, const Tensor& output,
                           const LayerAux& aux, Mode mode, const Tensor& grad_out,
                           const std::vector<Tensor*>& grad_inputs, ParamMap* grad_params) {
    auto gparam = [&](const char* name) -> Tensor* {
        if (!grad_params) return nullptr;
        auto it = grad_params->find(name);
        return it == grad_params->end() ? nullptr : &it->second;
    };

    if (std::holds_alternative<InputLayer>(kind)) return;
    if (std::holds_alternative<SoftmaxHead>(kind)) {
        if (grad_inputs[0])
            for (std::size_t i = 0; i < grad_out.numel(); ++i) (*grad_inputs[0])[i] += grad_out[i];
        return;
    }
    if (std::holds_alternative<Relu>(kind)) {
        if (grad_inputs[0])
            for (std::size_t i = 0; i < grad_out.numel(); ++i)
                if (output[i] > 0.0) (*grad_inputs[0])[i] += grad_out[i];
        return;
    }
    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        conv2d_backward(*inputs[0], params.at("weight"), c->stride, grad_out, grad_inputs[0],
                        gparam("weight"), c->has_bias ? gparam("bias") : nullptr);
        return;
    }
    if (const auto* s = std::get_if<SeparableConv2d>(&kind)) {
        const Tensor& dw = params.at("depthwise");
        const Tensor& pw = params.at("pointwise");
        // The depthwise intermediate is recomputed rather than cached.
        Tensor mid = depthwise_forward(*inputs[0], dw, s->stride);
        Tensor grad_mid(mid.shape());
        conv2d_backward(mid, pw, 1, grad_out, &grad_mid, gparam("pointwise"),
                        s->has_bias ? gparam("bias") : nullptr);
        depthwise_backward(*inputs[0], dw, s->stride, grad_mid, grad_inputs[0],
                           gparam("depthwise"));
        return;
    }
    if (std::holds_alternative<Dense>(kind)) {
        const bool has_bias = std::get<Dense>(kind).has_bias;
        dense_backward(*inputs[0], params.at("weight"), grad_out, grad_inputs[0], gparam("weight"),
                       has_bias ? gparam("bias") : nullptr);
        return;
    }
    if (std::holds_alternative<BatchNorm>(kind)) {
        batchnorm_backward(*inputs[0], params.at("scale"), aux.bn, mode == Mode::Train, grad_out,
                           grad_inputs[0], gparam("scale"), gparam("shift"));
        return;
    }
    if (const auto* p = std::get_if<MaxPool>(&kind)) {
        (void)p;
        if (grad_inputs[0]) maxpool_backward(inputs[0]->shape(), aux.argmax, grad_out, grad_inputs[0]);
        return;
    }
    if (std::holds_alternative<GlobalAvgPool>(kind)) {
        if (grad_inputs[0]) global_avgpool_backward(inputs[0]->shape(), grad_out, grad_inputs[0]);
        return;
    }
    if (std::holds_alternative<AddJoin>(kind)) {
        const double lambda = params.at("lambda")[0];
        const Tensor& x = *inputs[0];
        const Tensor& y = *inputs[1];
        double glambda = 0.0;
        for (std::size_t i = 0; i < grad_out.numel(); ++i) {
            if (grad_inputs[0]) (*grad_inputs[0])[i] += (1.0 - lambda) * grad_out[i];
            if (grad_inputs[1]) (*grad_inputs[1])[i] += lambda * grad_out[i];
            glambda += grad_out[i] * (y[i] - x[i]);
        }
        if (Tensor* gl = gparam("lambda")) (*gl)[0] += glambda;
        return;
    }
    // ConcatJoin: route channel slices back to each source.
    const int batch = grad_out.dim(0), h = grad_out.dim(2), w = grad_out.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t off = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t block = static_cast<std::size_t>(inputs[i]->dim(1)) * plane;
        if (grad_inputs[i]) {
            for (int b = 0; b < batch; ++b) {
                const double* src =
                    grad_out.data() + static_cast<std::size_t>(b) * grad_out.dim(1) * plane + off;
                double* dst = grad_inputs[i]->data() + static_cast<std::size_t>(b) * block;
                for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
            }
        }
        off += block;
    }
}

/// Evaluate the network on a batch. `weights` is mutable because train-mode
/// BatchNorm folds the batch statistics into its moving averages. When
/// `trace` is given it is filled for a later run_backward.
inline Tensor run_forward(const ArchGraph& graph, WeightStore& weights, const Tensor& batch,
                          Mode mode, ForwardTrace* trace = nullptr) {
    if (batch.rank() != 4 || batch.dim(1) != graph.input_spec.channels ||
        batch.dim(2) != graph.input_spec.height || batch.dim(3) != graph.input_spec.width)
        throw Error("shape_mismatch",
                    "batch " + shape_str(batch.shape()) + " does not match input spec (" +
                        std::to_string(graph.input_spec.channels) + "," +
                        std::to_string(graph.input_spec.height) + "," +
                        std::to_string(graph.input_spec.width) + ")");
    const auto order = graph.topo_order();
    if (!order) throw Error("cycle", "graph contains a cycle");

    if (trace) {
        trace->mode = mode;
        trace->graph_stamp = detail::graph_stamp(graph);
        trace->batch_shape = batch.shape();
        trace->outputs.clear();
        trace->aux.clear();
        trace->complete = false;
    }

    std::map<int, Tensor> local_outputs;
    std::map<int, Tensor>& outputs = trace ? trace->outputs : local_outputs;
    static ParamMap no_params;

    const int head_id = graph.output_node() ? *graph.output_node() : -1;
    if (head_id < 0) throw Error("head_count", "graph has no softmax head");
    for (int id : *order) {
        const GraphNode& n = graph.node(id);
        if (std::holds_alternative<InputLayer>(n.kind)) {
            outputs.emplace(id, batch);
            continue;
        }
        std::vector<const Tensor*> ins;
        for (const auto& e : graph.in_edges(id)) ins.push_back(&outputs.at(e.src));
        ParamMap* params = weights.has(id) ? &weights.at(id) : &no_params;
        LayerAux* aux = trace ? &trace->aux[id] : nullptr;
        Tensor out;
        try {
            out = eval_layer(n.kind, *params, ins, mode, aux);
        } catch (const Error& e) {
            throw Error(e.code(), "node " + std::to_string(id) + ": " + e.what());
        }
        if (!out.all_finite())
            throw Error("non_finite", "non-finite activation at node " + std::to_string(id) +
                                          " (" + kind_name(n.kind) + ")");
        outputs.emplace(id, std::move(out));
    }
    Tensor logits = outputs.at(head_id);
    if (trace) trace->complete = true;
    return logits;
}

/// Reverse-mode pass. Requires the trace of a completed forward on the same
/// graph; returns gradients for every learnable parameter (AddJoin lambda and
/// BatchNorm scale/shift included).
inline WeightStore run_backward(const ArchGraph& graph, const WeightStore& weights,
                                const ForwardTrace& trace, const Tensor& loss_grad) {
    if (!trace.complete || trace.graph_stamp != detail::graph_stamp(graph))
        throw Error("no_forward", "run_backward requires a completed forward trace for this graph");
    const auto order = graph.topo_order();
    if (!order) throw Error("cycle", "graph contains a cycle");
    const int head_id = *graph.output_node();
    if (loss_grad.shape() != trace.outputs.at(head_id).shape())
        throw Error("shape_mismatch", "loss gradient " + shape_str(loss_grad.shape()) +
                                          " does not match logits " +
                                          shape_str(trace.outputs.at(head_id).shape()));

    WeightStore grads = zero_gradients(graph);
    std::map<int, Tensor> out_grads;  // gradient w.r.t. each node's output
    out_grads.emplace(head_id, loss_grad);
    static const ParamMap no_params;
    static const LayerAux no_aux;

    for (auto it = order->rbegin(); it != order->rend(); ++it) {
        const int id = *it;
        const GraphNode& n = graph.node(id);
        auto git = out_grads.find(id);
        if (git == out_grads.end()) continue;  // no path to the loss
        if (std::holds_alternative<InputLayer>(n.kind)) continue;

        const auto in_edges = graph.in_edges(id);
        std::vector<const Tensor*> ins;
        std::vector<Tensor*> gins;
        for (const auto& e : in_edges) {
            ins.push_back(&trace.outputs.at(e.src));
            auto f = out_grads.find(e.src);
            if (f == out_grads.end())
                f = out_grads.emplace(e.src, Tensor(trace.outputs.at(e.src).shape())).first;
            gins.push_back(&f->second);
        }
        const ParamMap& params = weights.has(id) ? weights.at(id) : no_params;
        ParamMap* gparams = grads.has(id) ? &grads.at(id) : nullptr;
        auto ax = trace.aux.find(id);
        backward_layer(n.kind, params, ins, trace.outputs.at(id),
                       ax == trace.aux.end() ? no_aux : ax->second, trace.mode, git->second, gins,
                       gparams);
    }
    return grads;
}

}  // namespace monas
