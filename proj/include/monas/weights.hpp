#pragma once

// WeightStore: every learnable parameter and buffer of a network, keyed by
// node id and parameter name. Plain value type; copying a store is how
// children inherit parent weights.

#include <cstdint>
#include <map>
#include <string>

#include "monas/graph.hpp"
#include "monas/rng.hpp"

namespace monas {

struct WeightStore {
    std::map<int, ParamMap> nodes;

    bool operator==(const WeightStore&) const = default;

    ParamMap& at(int id) { return nodes.at(id); }
    const ParamMap& at(int id) const { return nodes.at(id); }
    bool has(int id) const { return nodes.count(id) != 0; }

    Tensor& param(int id, const std::string& name) { return nodes.at(id).at(name); }
    const Tensor& param(int id, const std::string& name) const { return nodes.at(id).at(name); }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [id, params] : nodes)
            for (const auto& [name, t] : params) n += t.numel();
        return n;
    }
};

namespace detail {

inline double he_std(const Shape& weight_shape) {
    // fan_in over all dims past the first (conv: cin*k*k, dense: in).
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < weight_shape.size(); ++i)
        fan_in *= static_cast<std::size_t>(weight_shape[i]);
    return std::sqrt(2.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
}

}  // namespace detail

/// Fresh parameter tensors for one node: He-normal for weight matrices,
/// zeros for biases and AddJoin's lambda, identity configuration for
/// BatchNorm (scale 1, shift 0, moving mean 0, moving variance 1).
inline ParamMap init_node_params(const LayerKind& kind, int in_channels, Rng& rng) {
    ParamMap params;
    for (const auto& spec : param_specs(kind, in_channels)) {
        Tensor t(spec.shape);
        if (spec.name == "weight" || spec.name == "depthwise" || spec.name == "pointwise") {
            const double sd = detail::he_std(spec.shape);
            for (auto& v : t.vec()) v = rng.normal(0.0, sd);
        } else if (spec.name == "scale" || spec.name == "moving_var") {
            for (auto& v : t.vec()) v = 1.0;
        }
        // bias, shift, moving_mean, lambda stay zero
        params.emplace(spec.name, std::move(t));
    }
    return params;
}

/// Randomly initialized weights for every node of a validated graph.
inline WeightStore init_weights(const ArchGraph& graph, Rng& rng) {
    const auto shapes = infer_shapes(graph);
    WeightStore store;
    const auto order = graph.topo_order();
    if (!order) throw Error("cycle", "cannot initialize weights for a cyclic graph");
    for (int id : *order) {
        const GraphNode& n = graph.node(id);
        const int cin = graph.in_edges(id).empty() ? 0 : input_channels_of(graph, shapes, id);
        ParamMap p = init_node_params(n.kind, cin, rng);
        if (!p.empty()) store.nodes.emplace(id, std::move(p));
    }
    return store;
}

/// Zero-filled tensors matching the learnable parameters of `graph`.
inline WeightStore zero_gradients(const ArchGraph& graph) {
    const auto shapes = infer_shapes(graph);
    WeightStore grads;
    for (const auto& n : graph.nodes) {
        const int cin = graph.in_edges(n.id).empty() ? 0 : input_channels_of(graph, shapes, n.id);
        ParamMap p;
        for (const auto& spec : param_specs(n.kind, cin))
            if (spec.learnable) p.emplace(spec.name, Tensor(spec.shape));
        if (!p.empty()) grads.nodes.emplace(n.id, std::move(p));
    }
    return grads;
}

/// Element count of the learnable subset of `store` (what count_params counts).
/// Sizes come from the stored tensors, so only the learnable names matter here.
inline std::size_t learnable_elements(const ArchGraph& graph, const WeightStore& store) {
    std::size_t n = 0;
    for (const auto& node : graph.nodes) {
        auto it = store.nodes.find(node.id);
        if (it == store.nodes.end()) continue;
        for (const auto& spec : param_specs(node.kind, 1)) {
            if (!spec.learnable) continue;
            auto pit = it->second.find(spec.name);
            if (pit != it->second.end()) n += pit->second.numel();
        }
    }
    return n;
}

/// Verify that `store` holds a tensor of the right shape for every parameter
/// the graph requires. Throws Error("missing_weights"/"shape_mismatch").
inline void check_weights(const ArchGraph& graph, const WeightStore& store) {
    const auto shapes = infer_shapes(graph);
    for (const auto& n : graph.nodes) {
        const int cin = graph.in_edges(n.id).empty() ? 0 : input_channels_of(graph, shapes, n.id);
        const auto specs = param_specs(n.kind, cin);
        if (specs.empty()) continue;
        auto it = store.nodes.find(n.id);
        if (it == store.nodes.end())
            throw Error("missing_weights", "no weights for node " + std::to_string(n.id) + " (" +
                                               kind_name(n.kind) + ")");
        for (const auto& spec : specs) {
            auto pit = it->second.find(spec.name);
            if (pit == it->second.end())
                throw Error("missing_weights", "node " + std::to_string(n.id) +
                                                   " missing parameter '" + spec.name + "'");
            if (pit->second.shape() != spec.shape)
                throw Error("shape_mismatch",
                            "node " + std::to_string(n.id) + " parameter '" + spec.name +
                                "' has shape " + shape_str(pit->second.shape()) + ", expected " +
                                shape_str(spec.shape));
        }
    }
}

}  // namespace monas
