#pragma once

// The six mutation operators plus the random child generator.
//
// Exact morphisms (function-preserving by weight construction):
//   insert_conv_block - identity Conv-BatchNorm-ReLU after a ReLU/input site
//   widen_conv        - double a convolution's filters; successor weights for
//                       the new channels start at zero
//   add_skip          - additive skip through (1-lambda)x + lambda*y with
//                       lambda = 0, or concatenation with zero-padded
//                       successors
// Approximate morphisms (capacity reducing, repaired by distillation):
//   remove_layer      - splice out a layer or a skip join
//   prune_filters     - drop the lowest-L2 filters of a convolution
//   to_separable      - replace a convolution by a depthwise separable one
//
// Channel-changing operators require every downstream path to reach a
// conv/dense "absorber" through channel-preserving layers (ReLU, BatchNorm,
// pooling); the absorbers' weights are padded or sliced so the represented
// function is controlled exactly. Sites where that scan fails are simply not
// applicable.
//
// Repair freezes everything outside the affected node set and trains the
// affected weights against the parent's soft outputs (cross-entropy, which is
// gradient-identical to the reported KL-divergence distance). The returned
// weights are the best distance seen, so delta_after <= delta_before by
// construction.

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "monas/dataset.hpp"
#include "monas/loss.hpp"
#include "monas/network.hpp"
#include "monas/space.hpp"

namespace monas {

enum class MorphKind {
    InsertConvBlock,
    WidenConv,
    AddSkipAdd,
    AddSkipConcat,
    RemoveLayer,
    PruneFilters,
    ToSeparable,
};

inline const char* morph_name(MorphKind k) {
    switch (k) {
        case MorphKind::InsertConvBlock: return "insert_conv_block";
        case MorphKind::WidenConv: return "widen_conv";
        case MorphKind::AddSkipAdd: return "add_skip_add";
        case MorphKind::AddSkipConcat: return "add_skip_concat";
        case MorphKind::RemoveLayer: return "remove_layer";
        case MorphKind::PruneFilters: return "prune_filters";
        case MorphKind::ToSeparable: return "to_separable";
    }
    return "?";
}

inline bool is_exact_morphism(MorphKind k) {
    return k == MorphKind::InsertConvBlock || k == MorphKind::WidenConv ||
           k == MorphKind::AddSkipAdd || k == MorphKind::AddSkipConcat;
}

inline std::vector<MorphKind> all_morph_kinds() {
    return {MorphKind::InsertConvBlock, MorphKind::WidenConv,   MorphKind::AddSkipAdd,
            MorphKind::AddSkipConcat,   MorphKind::RemoveLayer, MorphKind::PruneFilters,
            MorphKind::ToSeparable};
}

inline std::vector<MorphKind> exact_morph_kinds() {
    return {MorphKind::InsertConvBlock, MorphKind::WidenConv, MorphKind::AddSkipAdd,
            MorphKind::AddSkipConcat};
}

enum class KeepFraction { Half, ThreeQuarters };

inline double keep_fraction_value(KeepFraction f) {
    return f == KeepFraction::Half ? 0.5 : 0.75;
}

struct RepairConfig {
    int epochs = 5;
    int batch_size = 64;
    double learning_rate = 0.01;
    int batches = 4;  // training batches sampled per mutation
    bool operator==(const RepairConfig&) const = default;
};

struct AppliedOp {
    MorphKind kind;
    std::vector<int> sites;
    double delta_before = 0.0;
    double delta_after = 0.0;
};

struct MutationOutcome {
    ArchGraph graph;
    WeightStore weights;
    std::set<int> affected_nodes;
    std::vector<int> new_nodes;
    double delta_before = 0.0;
    double delta_after = 0.0;
    std::vector<AppliedOp> ops;
};

// ---------------------------------------------------------------------------
// Downstream channel-edit scan
// ---------------------------------------------------------------------------

namespace morph_detail {

struct DownstreamEdit {
    bool ok = true;
    std::set<int> absorbers;    // conv/separable/dense whose input slices change
    std::set<int> batchnorms;   // normalization layers whose channels change
    std::string blocker;
};

inline DownstreamEdit scan_downstream(const ArchGraph& g, int from) {
    DownstreamEdit r;
    std::vector<int> stack{from};
    std::set<int> visited;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int s : g.successors(id)) {
            if (visited.count(s)) continue;
            visited.insert(s);
            const LayerKind& k = g.node(s).kind;
            if (is_conv_like(k) || std::holds_alternative<Dense>(k)) {
                r.absorbers.insert(s);
            } else if (std::holds_alternative<BatchNorm>(k)) {
                r.batchnorms.insert(s);
                stack.push_back(s);
            } else if (std::holds_alternative<Relu>(k) || std::holds_alternative<MaxPool>(k) ||
                       std::holds_alternative<GlobalAvgPool>(k)) {
                stack.push_back(s);
            } else {
                r.ok = false;
                r.blocker = kind_name(k);
                return r;
            }
        }
    }
    return r;
}

// --- tensor channel surgery -------------------------------------------------

/// Grow dim `axis` of a 2- or 4-D tensor from `old_n` to `old_n + extra`.
/// New entries are zero unless `fill` is given.
inline Tensor grow_axis(const Tensor& t, int axis, int extra,
                        const std::function<double()>* fill = nullptr) {
    Shape shape = t.shape();
    const int old_n = shape[axis];
    shape[axis] = old_n + extra;
    Tensor out(shape);
    // outer = product of dims before axis, inner = product after.
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= t.shape()[i];
    for (std::size_t i = axis + 1; i < t.shape().size(); ++i) inner *= t.shape()[i];
    for (std::size_t o = 0; o < outer; ++o) {
        for (int c = 0; c < old_n + extra; ++c) {
            double* dst = out.data() + (o * (old_n + extra) + c) * inner;
            if (c < old_n) {
                const double* src = t.data() + (o * old_n + c) * inner;
                std::copy(src, src + inner, dst);
            } else if (fill) {
                for (std::size_t i = 0; i < inner; ++i) dst[i] = (*fill)();
            }
        }
    }
    return out;
}

/// Drop the positions in `removed` (sorted) from dim `axis`.
inline Tensor shrink_axis(const Tensor& t, int axis, const std::vector<int>& removed) {
    Shape shape = t.shape();
    const int old_n = shape[axis];
    shape[axis] = old_n - static_cast<int>(removed.size());
    Tensor out(shape);
    std::vector<bool> drop(old_n, false);
    for (int r : removed) drop[r] = true;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= t.shape()[i];
    for (std::size_t i = axis + 1; i < t.shape().size(); ++i) inner *= t.shape()[i];
    for (std::size_t o = 0; o < outer; ++o) {
        int kept = 0;
        for (int c = 0; c < old_n; ++c) {
            if (drop[c]) continue;
            const double* src = t.data() + (o * old_n + c) * inner;
            std::copy(src, src + inner, out.data() + (o * shape[axis] + kept) * inner);
            ++kept;
        }
    }
    return out;
}

/// Identity-acting BatchNorm entries for `extra` fresh channels.
inline void bn_append_channels(ParamMap& p, int extra) {
    auto fill = [](Tensor& t, int extra_n, double value) {
        Tensor grown({static_cast<int>(t.numel()) + extra_n});
        std::copy(t.vec().begin(), t.vec().end(), grown.data());
        for (int i = 0; i < extra_n; ++i) grown[t.numel() + i] = value;
        t = std::move(grown);
    };
    fill(p.at("scale"), extra, std::sqrt(1.0 + kBatchNormEpsilon));
    fill(p.at("shift"), extra, 0.0);
    fill(p.at("moving_mean"), extra, 0.0);
    fill(p.at("moving_var"), extra, 1.0);
}

inline void bn_remove_channels(ParamMap& p, const std::vector<int>& removed) {
    for (const char* name : {"scale", "shift", "moving_mean", "moving_var"})
        p.at(name) = shrink_axis(p.at(name), 0, removed);
}

/// Pad an absorber's input slices with zeros for `extra` channels appended
/// after `old_in`. A separable absorber gets fresh random depthwise filters
/// for the new channels; its pointwise zeros keep the function unchanged.
inline void absorber_append_input(const LayerKind& kind, ParamMap& p, int extra, Rng& rng) {
    if (std::holds_alternative<Conv2d>(kind)) {
        p.at("weight") = grow_axis(p.at("weight"), 1, extra);
    } else if (std::holds_alternative<SeparableConv2d>(kind)) {
        const double sd = detail::he_std(p.at("depthwise").shape());
        std::function<double()> fill = [&rng, sd] { return rng.normal(0.0, sd); };
        p.at("depthwise") = grow_axis(p.at("depthwise"), 0, extra, &fill);
        p.at("pointwise") = grow_axis(p.at("pointwise"), 1, extra);
    } else {  // Dense
        p.at("weight") = grow_axis(p.at("weight"), 1, extra);
    }
}

inline void absorber_remove_input(const LayerKind& kind, ParamMap& p,
                                  const std::vector<int>& removed) {
    if (std::holds_alternative<SeparableConv2d>(kind)) {
        p.at("depthwise") = shrink_axis(p.at("depthwise"), 0, removed);
        p.at("pointwise") = shrink_axis(p.at("pointwise"), 1, removed);
    } else {
        p.at("weight") = shrink_axis(p.at("weight"), 1, removed);
    }
}

inline int out_channels_of(const LayerKind& kind) {
    if (const auto* c = std::get_if<Conv2d>(&kind)) return c->out_channels;
    if (const auto* s = std::get_if<SeparableConv2d>(&kind)) return s->out_channels;
    throw Error("bad_site", "node is not a convolution");
}

inline void set_out_channels(LayerKind& kind, int n) {
    if (auto* c = std::get_if<Conv2d>(&kind))
        c->out_channels = n;
    else
        std::get<SeparableConv2d>(kind).out_channels = n;
}

/// Validate the mutated child; min-size failures map to "constraint".
inline void require_child_valid(const ArchGraph& g, const SearchSpaceConstraint& constraint) {
    const auto violations = validate(g, constraint);
    if (violations.empty()) return;
    for (const auto& v : violations)
        if (v.code == "min_convs" || v.code == "min_filters")
            throw Error("constraint", v.message);
    throw Error(violations[0].code, violations[0].message);
}

}  // namespace morph_detail

// ---------------------------------------------------------------------------
// Repair (distillation against the parent)
// ---------------------------------------------------------------------------

/// Sample `cfg.batches` fixed training batches for one mutation.
inline std::vector<Tensor> make_repair_batches(const Dataset& data, const RepairConfig& cfg,
                                               Rng& rng) {
    if (data.size() == 0) throw Error("empty_data", "repair dataset is empty");
    std::vector<Tensor> batches;
    const int c = data.images.dim(1), h = data.images.dim(2), w = data.images.dim(3);
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    for (int b = 0; b < cfg.batches; ++b) {
        const int n = std::min(cfg.batch_size, data.size());
        Tensor batch({n, c, h, w});
        for (int i = 0; i < n; ++i) {
            const int idx = static_cast<int>(rng.uniform_int(data.size()));
            const double* src = data.images.data() + idx * stride;
            std::copy(src, src + stride, batch.data() + i * stride);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

struct RepairResult {
    double delta_before = 0.0;
    double delta_after = 0.0;
};

/// Distillation repair: train the affected weights of the child so its
/// outputs match the parent's soft outputs on the given batches. Weights
/// outside `affected` are untouched; BatchNorm runs on frozen statistics
/// throughout, so no buffers drift. Keeps the best distance seen (including
/// the starting point), hence delta_after <= delta_before.
inline RepairResult repair_distill(const ArchGraph& parent_graph, const WeightStore& parent_weights,
                                   const ArchGraph& child_graph, WeightStore& child_weights,
                                   const std::set<int>& affected, const RepairConfig& cfg,
                                   const std::vector<Tensor>& batches) {
    if (affected.empty()) throw Error("bad_config", "repair needs a nonempty affected set");
    if (batches.empty()) throw Error("empty_data", "repair needs at least one batch");

    WeightStore parent_scratch = parent_weights;
    std::vector<Tensor> parent_logits;
    std::vector<Tensor> soft_targets;
    for (const Tensor& b : batches) {
        Tensor logits = run_forward(parent_graph, parent_scratch, b, Mode::Infer);
        soft_targets.push_back(softmax_rows(logits));
        parent_logits.push_back(std::move(logits));
    }

    auto distance = [&](WeightStore& w) {
        double total = 0.0;
        for (std::size_t i = 0; i < batches.size(); ++i)
            total += mean_kl_from_logits(parent_logits[i],
                                         run_forward(child_graph, w, batches[i], Mode::Infer));
        return total / static_cast<double>(batches.size());
    };

    RepairResult result;
    result.delta_before = distance(child_weights);
    double best = result.delta_before;
    WeightStore best_weights = child_weights;

    if (result.delta_before > 1e-12) {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            for (std::size_t i = 0; i < batches.size(); ++i) {
                ForwardTrace trace;
                const Tensor logits =
                    run_forward(child_graph, child_weights, batches[i], Mode::Infer, &trace);
                const LossResult loss = softmax_crossentropy(logits, soft_targets[i]);
                const WeightStore grads =
                    run_backward(child_graph, child_weights, trace, loss.grad_logits);
                for (int id : affected) {
                    if (!grads.has(id)) continue;
                    for (const auto& [name, g] : grads.at(id)) {
                        Tensor& w = child_weights.param(id, name);
                        for (std::size_t k = 0; k < w.numel(); ++k)
                            w[k] -= cfg.learning_rate * g[k];
                    }
                }
            }
            const double d = distance(child_weights);
            if (d < best) {
                best = d;
                best_weights = child_weights;
            }
        }
        child_weights = std::move(best_weights);
    }
    result.delta_after = best;
    return result;
}

// ---------------------------------------------------------------------------
// Exact morphisms
// ---------------------------------------------------------------------------

/// Insert an identity-initialized Conv-BatchNorm-ReLU block after `site`.
/// The site must emit a non-negative signal (a ReLU output or the input
/// stem over [0,1] data) so the trailing ReLU is a no-op; out_channels must
/// equal the site's channel count.
inline MutationOutcome insert_conv_block(const ArchGraph& graph, const WeightStore& weights,
                                         int site, int out_channels, Rng& rng) {
    const GraphNode& s = graph.node(site);
    if (!std::holds_alternative<Relu>(s.kind) && !std::holds_alternative<InputLayer>(s.kind))
        throw Error("bad_site", "insert_conv_block site must be a relu output or the input stem");
    const auto shapes = infer_shapes(graph);
    const Shape& out = shapes.at(site);
    if (out.size() != 4) throw Error("bad_site", "site does not produce a feature map");
    const int channels = out[1];
    if (out_channels != channels)
        throw Error("bad_config", "identity insertion requires out_channels == " +
                                      std::to_string(channels));
    (void)rng;

    MutationOutcome r;
    r.graph = graph;
    r.weights = weights;
    int next = r.graph.next_id();
    const int conv = next++, bn = next++, relu = next++;
    r.graph.nodes.push_back({conv, Conv2d{3, 1, channels, true}, std::nullopt});
    r.graph.nodes.push_back({bn, BatchNorm{}, std::nullopt});
    r.graph.nodes.push_back({relu, Relu{}, std::nullopt});
    for (auto& e : r.graph.edges)
        if (e.src == site) e.src = relu;
    r.graph.edges.push_back({site, conv, 0});
    r.graph.edges.push_back({conv, bn, 0});
    r.graph.edges.push_back({bn, relu, 0});

    ParamMap conv_params;
    Tensor w({channels, channels, 3, 3});
    for (int c = 0; c < channels; ++c) w.at4(c, c, 1, 1) = 1.0;
    conv_params.emplace("weight", std::move(w));
    conv_params.emplace("bias", Tensor({channels}));
    r.weights.nodes.emplace(conv, std::move(conv_params));

    ParamMap bn_params;
    bn_params.emplace("scale", Tensor::full({channels}, std::sqrt(1.0 + kBatchNormEpsilon)));
    bn_params.emplace("shift", Tensor({channels}));
    bn_params.emplace("moving_mean", Tensor({channels}));
    bn_params.emplace("moving_var", Tensor::full({channels}, 1.0));
    r.weights.nodes.emplace(bn, std::move(bn_params));

    r.affected_nodes = {conv, bn, relu};
    r.new_nodes = {conv, bn, relu};
    r.ops.push_back({MorphKind::InsertConvBlock, {site}, 0.0, 0.0});
    return r;
}

/// Double the filters of the convolution at `site`. New filters are random at
/// small scale; every absorbing successor's slices for the new channels are
/// zero, so the function is preserved.
inline MutationOutcome widen_conv(const ArchGraph& graph, const WeightStore& weights, int site,
                                  int factor, Rng& rng) {
    if (factor != 2) throw Error("bad_config", "widen factor is fixed to 2");
    const GraphNode& s = graph.node(site);
    if (!is_conv_like(s.kind)) throw Error("bad_site", "widen site must be a convolution");
    const auto scan = morph_detail::scan_downstream(graph, site);
    if (!scan.ok)
        throw Error("bad_site", "widen at node " + std::to_string(site) +
                                    " blocked by downstream " + scan.blocker);

    const int old_out = morph_detail::out_channels_of(s.kind);
    const int extra = old_out;

    MutationOutcome r;
    r.graph = graph;
    r.weights = weights;
    morph_detail::set_out_channels(r.graph.find_node(site)->kind, old_out * 2);

    ParamMap& sp = r.weights.at(site);
    if (std::holds_alternative<Conv2d>(s.kind)) {
        const double sd = 0.1 * detail::he_std(sp.at("weight").shape());
        std::function<double()> fill = [&rng, sd] { return rng.normal(0.0, sd); };
        sp.at("weight") = morph_detail::grow_axis(sp.at("weight"), 0, extra, &fill);
        if (sp.count("bias")) sp.at("bias") = morph_detail::grow_axis(sp.at("bias"), 0, extra);
    } else {
        const double sd = 0.1 * detail::he_std(sp.at("pointwise").shape());
        std::function<double()> fill = [&rng, sd] { return rng.normal(0.0, sd); };
        sp.at("pointwise") = morph_detail::grow_axis(sp.at("pointwise"), 0, extra, &fill);
        if (sp.count("bias")) sp.at("bias") = morph_detail::grow_axis(sp.at("bias"), 0, extra);
    }
    for (int bn : scan.batchnorms) morph_detail::bn_append_channels(r.weights.at(bn), extra);
    for (int a : scan.absorbers)
        morph_detail::absorber_append_input(r.graph.node(a).kind, r.weights.at(a), extra, rng);

    r.affected_nodes.insert(site);
    r.affected_nodes.insert(scan.absorbers.begin(), scan.absorbers.end());
    r.affected_nodes.insert(scan.batchnorms.begin(), scan.batchnorms.end());
    r.ops.push_back({MorphKind::WidenConv, {site}, 0.0, 0.0});
    return r;
}

/// Add a skip connection from `src` to just after `dst`. Additive mode joins
/// through (1-lambda)*x + lambda*y with lambda = 0 (x is dst's output);
/// concatenation mode zero-pads the absorbing successors.
inline MutationOutcome add_skip(const ArchGraph& graph, const WeightStore& weights, int src,
                                int dst, bool concat, Rng& rng) {
    if (src == dst) throw Error("bad_site", "skip endpoints must differ");
    const auto order = graph.topo_order();
    if (!order) throw Error("cycle", "graph contains a cycle");
    const auto pos = [&](int id) {
        return std::find(order->begin(), order->end(), id) - order->begin();
    };
    if (pos(src) >= pos(dst))
        throw Error("bad_site", "skip source must strictly precede its destination");

    const auto shapes = infer_shapes(graph);
    const Shape& a = shapes.at(dst);
    const Shape& b = shapes.at(src);
    if (a.size() != 4 || b.size() != 4)
        throw Error("bad_site", "skip endpoints must produce feature maps");
    if (a[2] != b[2] || a[3] != b[3])
        throw Error("shape_mismatch", "skip endpoints differ spatially: " + shape_str(a) + " vs " +
                                          shape_str(b));
    if (!concat && a[1] != b[1])
        throw Error("shape_mismatch", "additive skip needs equal channels: " + shape_str(a) +
                                          " vs " + shape_str(b));

    morph_detail::DownstreamEdit scan;
    if (concat) {
        scan = morph_detail::scan_downstream(graph, dst);
        if (!scan.ok)
            throw Error("bad_site", "concat skip at node " + std::to_string(dst) +
                                        " blocked by downstream " + scan.blocker);
    }

    MutationOutcome r;
    r.graph = graph;
    r.weights = weights;
    const int join = r.graph.next_id();
    r.graph.nodes.push_back({join, concat ? LayerKind{ConcatJoin{}} : LayerKind{AddJoin{}},
                             std::nullopt});
    for (auto& e : r.graph.edges)
        if (e.src == dst) e.src = join;
    r.graph.edges.push_back({dst, join, 0});
    r.graph.edges.push_back({src, join, 1});

    if (concat) {
        for (int bn : scan.batchnorms) morph_detail::bn_append_channels(r.weights.at(bn), b[1]);
        for (int abs_id : scan.absorbers)
            morph_detail::absorber_append_input(r.graph.node(abs_id).kind, r.weights.at(abs_id),
                                                b[1], rng);
        r.affected_nodes.insert(scan.absorbers.begin(), scan.absorbers.end());
        r.affected_nodes.insert(scan.batchnorms.begin(), scan.batchnorms.end());
    } else {
        ParamMap p;
        p.emplace("lambda", Tensor::scalar(0.0));
        r.weights.nodes.emplace(join, std::move(p));
    }
    r.affected_nodes.insert(join);
    r.new_nodes = {join};
    r.ops.push_back(
        {concat ? MorphKind::AddSkipConcat : MorphKind::AddSkipAdd, {src, dst}, 0.0, 0.0});
    return r;
}

// ---------------------------------------------------------------------------
// Approximate morphisms (structure only; repair is applied by the callers
// below so cell-replicated variants can share one repair pass)
// ---------------------------------------------------------------------------

namespace morph_detail {

inline bool removable(const ArchGraph& g, const std::map<int, Shape>& shapes, int site) {
    const GraphNode& n = g.node(site);
    if (std::holds_alternative<Relu>(n.kind) || std::holds_alternative<BatchNorm>(n.kind))
        return true;
    if (std::holds_alternative<AddJoin>(n.kind)) return true;
    if (std::holds_alternative<ConcatJoin>(n.kind)) return scan_downstream(g, site).ok;
    if (is_conv_like(n.kind)) {
        const auto in = g.in_edges(site);
        if (in.empty()) return false;
        const int cin = shapes.at(in[0].src)[1];
        const int stride = std::holds_alternative<Conv2d>(n.kind)
                               ? std::get<Conv2d>(n.kind).stride
                               : std::get<SeparableConv2d>(n.kind).stride;
        return stride == 1 && cin == out_channels_of(n.kind);
    }
    return false;
}

/// Splice `site` out of the graph structure: its single kept predecessor
/// adopts the site's outgoing edges; the site's weights are dropped.
inline void remove_node_structural(ArchGraph& g, WeightStore& w, int site,
                                   std::set<int>& affected) {
    const GraphNode& n = g.node(site);
    const auto in = g.in_edges(site);
    const int keep_src = in[0].src;  // port 0 (the original path for joins)

    for (const auto& e : in)
        if (e.src != keep_src) affected.insert(e.src);
    affected.insert(keep_src);
    for (int s : g.successors(site)) affected.insert(s);

    if (std::holds_alternative<ConcatJoin>(n.kind)) {
        const auto shapes = infer_shapes(g);
        const int kept_channels = shapes.at(keep_src)[1];
        const int total = shapes.at(site)[1];
        std::vector<int> removed;
        for (int c = kept_channels; c < total; ++c) removed.push_back(c);
        const auto scan = scan_downstream(g, site);
        for (int bn : scan.batchnorms) bn_remove_channels(w.at(bn), removed);
        for (int a : scan.absorbers) absorber_remove_input(g.node(a).kind, w.at(a), removed);
        for (int bn : scan.batchnorms) affected.insert(bn);
        for (int a : scan.absorbers) affected.insert(a);
    }

    g.edges.erase(std::remove_if(g.edges.begin(), g.edges.end(),
                                 [&](const GraphEdge& e) { return e.dst == site; }),
                  g.edges.end());
    for (auto& e : g.edges)
        if (e.src == site) e.src = keep_src;
    g.nodes.erase(std::remove_if(g.nodes.begin(), g.nodes.end(),
                                 [&](const GraphNode& x) { return x.id == site; }),
                  g.nodes.end());
    w.nodes.erase(site);
    affected.erase(site);
}

/// Drop the lowest-norm filters of the convolution at `site`; returns the
/// removed output-channel positions. Successor slices are removed by the
/// caller via scan_downstream.
inline std::vector<int> prune_site_filters(ArchGraph& g, WeightStore& w, int site,
                                           KeepFraction keep_fraction, int min_filters) {
    GraphNode* n = g.find_node(site);
    if (!n || !is_conv_like(n->kind)) throw Error("bad_site", "prune site must be a convolution");
    const int filters = out_channels_of(n->kind);
    if (filters < 4) throw Error("bad_site", "prune needs at least 4 filters");
    const int keep = static_cast<int>(
        std::lround(filters * keep_fraction_value(keep_fraction)));
    if (keep < min_filters || keep < 1)
        throw Error("constraint", "pruning would leave " + std::to_string(keep) +
                                      " filters, minimum is " + std::to_string(min_filters));

    ParamMap& p = w.at(site);
    const bool sep = std::holds_alternative<SeparableConv2d>(n->kind);
    const Tensor& filt = sep ? p.at("pointwise") : p.at("weight");
    const std::size_t per = filt.numel() / filters;
    std::vector<std::pair<double, int>> norms;
    for (int o = 0; o < filters; ++o) {
        double sq = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            const double v = filt[o * per + i];
            sq += v * v;
        }
        if (p.count("bias")) sq += p.at("bias")[o] * p.at("bias")[o];
        norms.push_back({sq, o});
    }
    std::sort(norms.begin(), norms.end());
    std::vector<int> removed;
    for (int i = 0; i < filters - keep; ++i) removed.push_back(norms[i].second);
    std::sort(removed.begin(), removed.end());

    if (sep)
        p.at("pointwise") = shrink_axis(p.at("pointwise"), 0, removed);
    else
        p.at("weight") = shrink_axis(p.at("weight"), 0, removed);
    if (p.count("bias")) p.at("bias") = shrink_axis(p.at("bias"), 0, removed);
    set_out_channels(n->kind, keep);
    return removed;
}

/// Replace the plain convolution at `site` by a separable one. Depthwise
/// starts as the identity; pointwise takes the kernel-center slice.
inline void to_separable_structural(ArchGraph& g, WeightStore& w, int site) {
    GraphNode* n = g.find_node(site);
    if (!n) throw Error("bad_site", "no such node");
    const auto* c = std::get_if<Conv2d>(&n->kind);
    if (!c) throw Error("bad_site", "to_separable site must be a plain convolution");
    if (c->kernel <= 1) throw Error("bad_site", "to_separable needs kernel > 1");

    const Tensor& old_w = w.param(site, "weight");
    const int out = old_w.dim(0), in = old_w.dim(1), k = old_w.dim(2);
    const int center = k / 2;

    ParamMap p;
    Tensor dw({in, 1, k, k});
    for (int i = 0; i < in; ++i) dw.at4(i, 0, center, center) = 1.0;
    Tensor pw({out, in, 1, 1});
    for (int o = 0; o < out; ++o)
        for (int i = 0; i < in; ++i) pw.at4(o, i, 0, 0) = old_w.at4(o, i, center, center);
    p.emplace("depthwise", std::move(dw));
    p.emplace("pointwise", std::move(pw));
    if (c->has_bias) p.emplace("bias", w.param(site, "bias"));

    n->kind = SeparableConv2d{c->kernel, c->stride, c->out_channels, c->has_bias};
    w.nodes.erase(site);
    w.nodes.emplace(site, std::move(p));
}

}  // namespace morph_detail

/// Remove the layer (or skip join) at `site`, then repair by distillation.
inline MutationOutcome remove_layer(const ArchGraph& graph, const WeightStore& weights, int site,
                                    const SearchSpaceConstraint& constraint,
                                    const RepairConfig& repair, const std::vector<Tensor>& batches) {
    const GraphNode& n = graph.node(site);
    const auto shapes = infer_shapes(graph);
    if (!morph_detail::removable(graph, shapes, site))
        throw Error("bad_site",
                    std::string("node is not removable (") + kind_name(n.kind) + ")");

    MutationOutcome r;
    r.graph = graph;
    r.weights = weights;
    morph_detail::remove_node_structural(r.graph, r.weights, site, r.affected_nodes);
    morph_detail::require_child_valid(r.graph, constraint);

    const auto rep = repair_distill(graph, weights, r.graph, r.weights, r.affected_nodes, repair,
                                    batches);
    r.delta_before = rep.delta_before;
    r.delta_after = rep.delta_after;
    r.ops.push_back({MorphKind::RemoveLayer, {site}, rep.delta_before, rep.delta_after});
    return r;
}

/// Drop the smallest-norm filters at `site` (keep half or three quarters),
/// slice every absorbing successor consistently, then repair.
inline MutationOutcome prune_filters(const ArchGraph& graph, const WeightStore& weights, int site,
                                     KeepFraction keep_fraction,
                                     const SearchSpaceConstraint& constraint,
                                     const RepairConfig& repair,
                                     const std::vector<Tensor>& batches) {
    const auto scan = morph_detail::scan_downstream(graph, site);
    if (!scan.ok)
        throw Error("bad_site", "prune at node " + std::to_string(site) +
                                    " blocked by downstream " + scan.blocker);

    MutationOutcome r;
    r.graph = graph;
    r.weights = weights;
    const std::vector<int> removed = morph_detail::prune_site_filters(
        r.graph, r.weights, site, keep_fraction, constraint.min_filters_per_conv);
    for (int bn : scan.batchnorms) morph_detail::bn_remove_channels(r.weights.at(bn), removed);
    for (int a : scan.absorbers)
        morph_detail::absorber_remove_input(r.graph.node(a).kind, r.weights.at(a), removed);
    morph_detail::require_child_valid(r.graph, constraint);

    r.affected_nodes.insert(site);
    r.affected_nodes.insert(scan.absorbers.begin(), scan.absorbers.end());
    r.affected_nodes.insert(scan.batchnorms.begin(), scan.batchnorms.end());

    const auto rep = repair_distill(graph, weights, r.graph, r.weights, r.affected_nodes, repair,
                                    batches);
    r.delta_before = rep.delta_before;
    r.delta_after = rep.delta_after;
    r.ops.push_back({MorphKind::PruneFilters, {site}, rep.delta_before, rep.delta_after});
    return r;
}

/// Substitute the plain convolution at `site` by a depthwise separable one,
/// initialized from the kernel-center slice, then repair.
inline MutationOutcome to_separable(const ArchGraph& graph, const WeightStore& weights, int site,
                                    const SearchSpaceConstraint& constraint,
                                    const RepairConfig& repair, const std::vector<Tensor>& batches) {
    MutationOutcome r;
    r.graph = graph;
    r.weights = weights;
    morph_detail::to_separable_structural(r.graph, r.weights, site);
    morph_detail::require_child_valid(r.graph, constraint);

    r.affected_nodes.insert(site);
    for (int s : graph.successors(site)) r.affected_nodes.insert(s);

    const auto rep = repair_distill(graph, weights, r.graph, r.weights, r.affected_nodes, repair,
                                    batches);
    r.delta_before = rep.delta_before;
    r.delta_after = rep.delta_after;
    r.ops.push_back({MorphKind::ToSeparable, {site}, rep.delta_before, rep.delta_after});
    return r;
}

}  // namespace monas
