#pragma once

// Architecture intermediate representation: a DAG of typed layers between one
// input node and one softmax head, plus structural validation and the cheap
// objective counters (parameters, multiply-adds).
//
// Graphs are immutable in spirit: mutation operators copy and rebuild rather
// than editing shared state, so a graph can be shared across threads freely.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "monas/error.hpp"
#include "monas/layers.hpp"

namespace monas {

/// Marks a node as the `local`-th node of cell instance `instance`; mutations
/// in cell-based search replicate across nodes sharing `local`.
struct CellTag {
    int instance = 0;
    int local = 0;
    bool operator==(const CellTag&) const = default;
};

struct GraphNode {
    int id = 0;
    LayerKind kind;
    std::optional<CellTag> cell;
    bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
    int src = 0;
    int dst = 0;
    int port = 0;
    bool operator==(const GraphEdge&) const = default;
};

struct InputSpec {
    int channels = 1;
    int height = 1;
    int width = 1;
    bool operator==(const InputSpec&) const = default;
};

struct ArchGraph {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    InputSpec input_spec;
    int num_classes = 2;

    bool operator==(const ArchGraph&) const = default;

    const GraphNode* find_node(int id) const {
        for (const auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }
    GraphNode* find_node(int id) {
        for (auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }

    const GraphNode& node(int id) const {
        const GraphNode* n = find_node(id);
        if (!n) throw Error("bad_node", "no node with id " + std::to_string(id));
        return *n;
    }

    int next_id() const {
        int m = 0;
        for (const auto& n : nodes) m = std::max(m, n.id + 1);
        return m;
    }

    /// Incoming edges of `id`, sorted by port.
    std::vector<GraphEdge> in_edges(int id) const {
        std::vector<GraphEdge> r;
        for (const auto& e : edges)
            if (e.dst == id) r.push_back(e);
        std::sort(r.begin(), r.end(), [](const GraphEdge& a, const GraphEdge& b) {
            return a.port < b.port;
        });
        return r;
    }

    std::vector<GraphEdge> out_edges(int id) const {
        std::vector<GraphEdge> r;
        for (const auto& e : edges)
            if (e.src == id) r.push_back(e);
        return r;
    }

    std::vector<int> predecessors(int id) const {
        std::vector<int> r;
        for (const auto& e : in_edges(id)) r.push_back(e.src);
        return r;
    }

    std::vector<int> successors(int id) const {
        std::vector<int> r;
        for (const auto& e : edges)
            if (e.src == id) r.push_back(e.dst);
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        return r;
    }

    std::optional<int> input_node() const {
        for (const auto& n : nodes)
            if (std::holds_alternative<InputLayer>(n.kind)) return n.id;
        return std::nullopt;
    }

    std::optional<int> output_node() const {
        for (const auto& n : nodes)
            if (std::holds_alternative<SoftmaxHead>(n.kind)) return n.id;
        return std::nullopt;
    }

    /// Topological order of node ids; nullopt when the graph has a cycle.
    std::optional<std::vector<int>> topo_order() const {
        std::map<int, int> indegree;
        for (const auto& n : nodes) indegree[n.id] = 0;
        for (const auto& e : edges) {
            auto it = indegree.find(e.dst);
            if (it != indegree.end() && indegree.count(e.src)) ++it->second;
        }
        // Ready queue kept sorted so the order is deterministic.
        std::set<int> ready;
        for (const auto& [id, deg] : indegree)
            if (deg == 0) ready.insert(id);
        std::vector<int> order;
        order.reserve(nodes.size());
        while (!ready.empty()) {
            const int id = *ready.begin();
            ready.erase(ready.begin());
            order.push_back(id);
            for (const auto& e : edges)
                if (e.src == id && indegree.count(e.dst) && --indegree[e.dst] == 0)
                    ready.insert(e.dst);
        }
        if (order.size() != nodes.size()) return std::nullopt;
        return order;
    }
};

// ---------------------------------------------------------------------------
// Shape propagation
// ---------------------------------------------------------------------------

/// Per-node output shapes for a symbolic batch of one example. Throws
/// Error("shape_mismatch"/"cycle"/...) when no shape assignment exists.
inline std::map<int, Shape> infer_shapes(const ArchGraph& graph, int batch = 1) {
    auto order = graph.topo_order();
    if (!order) throw Error("cycle", "graph contains a cycle");
    std::map<int, Shape> shapes;
    for (int id : *order) {
        const GraphNode& n = graph.node(id);
        if (std::holds_alternative<InputLayer>(n.kind)) {
            shapes[id] = {batch, graph.input_spec.channels, graph.input_spec.height,
                          graph.input_spec.width};
            continue;
        }
        std::vector<Shape> ins;
        for (const auto& e : graph.in_edges(id)) {
            auto it = shapes.find(e.src);
            if (it == shapes.end())
                throw Error("disconnected", "node " + std::to_string(id) + " has an input from " +
                                                std::to_string(e.src) + " outside the graph");
            ins.push_back(it->second);
        }
        try {
            shapes[id] = infer_output_shape(n.kind, ins);
        } catch (const Error& e) {
            throw Error("shape_mismatch", "node " + std::to_string(id) + ": " + e.what());
        }
    }
    return shapes;
}

/// Channel (or feature) count of the single input feeding `id`.
inline int input_channels_of(const ArchGraph& graph, const std::map<int, Shape>& shapes, int id) {
    const auto preds = graph.in_edges(id);
    if (preds.empty()) throw Error("bad_node", "node " + std::to_string(id) + " has no input");
    return shapes.at(preds[0].src)[1];
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct SearchSpaceConstraint {
    int min_convs = 3;
    int min_filters_per_conv = 2;
    bool operator==(const SearchSpaceConstraint&) const = default;
};

struct Violation {
    std::string code;
    int node_id = -1;  // -1 when not tied to a node
    std::string message;
};

inline std::vector<Violation> validate(const ArchGraph& graph,
                                       const SearchSpaceConstraint& constraint = {}) {
    std::vector<Violation> v;
    auto add = [&v](std::string code, int node, std::string msg) {
        v.push_back({std::move(code), node, std::move(msg)});
    };

    if (graph.nodes.empty()) {
        add("empty", -1, "graph has no nodes");
        return v;
    }
    std::set<int> ids;
    for (const auto& n : graph.nodes)
        if (!ids.insert(n.id).second) add("duplicate_id", n.id, "duplicate node id");
    for (const auto& e : graph.edges)
        if (!ids.count(e.src) || !ids.count(e.dst))
            add("dangling_edge", -1, "edge " + std::to_string(e.src) + "->" +
                                         std::to_string(e.dst) + " references a missing node");
    if (!v.empty()) return v;  // basic integrity failed, later checks would lie

    int inputs = 0, heads = 0;
    for (const auto& n : graph.nodes) {
        inputs += std::holds_alternative<InputLayer>(n.kind);
        heads += std::holds_alternative<SoftmaxHead>(n.kind);
    }
    if (inputs != 1) add("input_count", -1, "expected 1 input node, found " + std::to_string(inputs));
    if (heads != 1) add("head_count", -1, "expected 1 softmax head, found " + std::to_string(heads));
    if (!v.empty()) return v;

    const int input_id = *graph.input_node();
    const int head_id = *graph.output_node();
    if (!graph.in_edges(input_id).empty()) add("input_edges", input_id, "input node has incoming edges");
    if (!graph.out_edges(head_id).empty()) add("head_edges", head_id, "softmax head has outgoing edges");

    for (const auto& n : graph.nodes) {
        const auto in = graph.in_edges(n.id);
        std::set<int> ports;
        for (const auto& e : in) ports.insert(e.port);
        if (ports.size() != in.size() || (!in.empty() && (*ports.begin() != 0 ||
                                                          *ports.rbegin() != static_cast<int>(in.size()) - 1)))
            add("bad_ports", n.id, "incoming ports must be distinct and contiguous from 0");
        if (std::holds_alternative<InputLayer>(n.kind)) continue;
        if (is_join(n.kind)) {
            if (in.size() < 2) add("join_arity", n.id, "join needs >= 2 inputs");
            if (std::holds_alternative<AddJoin>(n.kind) && in.size() != 2)
                add("join_arity", n.id, "add join takes exactly 2 inputs");
        } else if (in.size() != 1) {
            add("arity", n.id, "expected exactly 1 incoming edge, found " + std::to_string(in.size()));
        }
    }

    const auto order = graph.topo_order();
    if (!order) {
        add("cycle", -1, "graph contains a cycle");
        return v;
    }

    // Reachability from input and co-reachability to the head.
    std::set<int> fwd{input_id};
    for (int id : *order)
        if (fwd.count(id))
            for (int s : graph.successors(id)) fwd.insert(s);
    std::set<int> bwd{head_id};
    for (auto it = order->rbegin(); it != order->rend(); ++it)
        if (bwd.count(*it))
            for (int p : graph.predecessors(*it)) bwd.insert(p);
    for (const auto& n : graph.nodes) {
        if (!fwd.count(n.id)) add("unreachable", n.id, "not reachable from the input");
        else if (!bwd.count(n.id)) add("dead_end", n.id, "does not reach the softmax head");
    }
    if (!v.empty()) return v;

    std::map<int, Shape> shapes;
    try {
        shapes = infer_shapes(graph);
    } catch (const Error& e) {
        add(e.code(), -1, e.what());
        return v;
    }
    if (shapes.at(head_id)[1] != graph.num_classes)
        add("head_width", head_id,
            "head receives " + std::to_string(shapes.at(head_id)[1]) + " features, expected " +
                std::to_string(graph.num_classes) + " classes");

    int convs = 0;
    for (const auto& n : graph.nodes) {
        if (!is_conv_like(n.kind)) continue;
        ++convs;
        const int out_ch = std::holds_alternative<Conv2d>(n.kind)
                               ? std::get<Conv2d>(n.kind).out_channels
                               : std::get<SeparableConv2d>(n.kind).out_channels;
        if (out_ch < constraint.min_filters_per_conv)
            add("min_filters", n.id,
                "conv has " + std::to_string(out_ch) + " filters, minimum is " +
                    std::to_string(constraint.min_filters_per_conv));
    }
    if (convs < constraint.min_convs)
        add("min_convs", -1,
            "graph has " + std::to_string(convs) + " convolutions, minimum is " +
                std::to_string(constraint.min_convs));
    return v;
}

inline bool is_valid(const ArchGraph& graph, const SearchSpaceConstraint& constraint = {}) {
    return validate(graph, constraint).empty();
}

inline void require_valid(const ArchGraph& graph, const SearchSpaceConstraint& constraint = {}) {
    const auto v = validate(graph, constraint);
    if (!v.empty()) throw Error(v[0].code, "invalid graph: " + v[0].message);
}

// ---------------------------------------------------------------------------
// Cheap objective counters
// ---------------------------------------------------------------------------

/// Learnable parameter count (conv/dense weights and biases, BatchNorm scale
/// and shift, AddJoin lambda). BatchNorm moving statistics are buffers, not
/// parameters, and are excluded.
inline std::int64_t count_params(const ArchGraph& graph) {
    const auto shapes = infer_shapes(graph);
    std::int64_t total = 0;
    for (const auto& n : graph.nodes) {
        const auto specs = param_specs(
            n.kind, graph.in_edges(n.id).empty() ? 0 : input_channels_of(graph, shapes, n.id));
        for (const auto& s : specs)
            if (s.learnable) total += static_cast<std::int64_t>(shape_numel(s.shape));
    }
    return total;
}

/// Multiply-add count for one example: conv contributes
/// out_elements * k^2 * in_channels, dense contributes out * in, a separable
/// conv sums its depthwise and pointwise parts. Normalization, activations,
/// pooling and joins count as zero.
inline std::int64_t count_macs(const ArchGraph& graph) {
    const auto shapes = infer_shapes(graph);
    std::int64_t total = 0;
    for (const auto& n : graph.nodes) {
        if (const auto* c = std::get_if<Conv2d>(&n.kind)) {
            const Shape& out = shapes.at(n.id);
            const std::int64_t cin = input_channels_of(graph, shapes, n.id);
            total += static_cast<std::int64_t>(out[1]) * out[2] * out[3] * c->kernel * c->kernel * cin;
        } else if (const auto* s = std::get_if<SeparableConv2d>(&n.kind)) {
            const Shape& out = shapes.at(n.id);
            const std::int64_t cin = input_channels_of(graph, shapes, n.id);
            const std::int64_t spatial = static_cast<std::int64_t>(out[2]) * out[3];
            total += spatial * cin * s->kernel * s->kernel;  // depthwise
            total += spatial * out[1] * cin;                 // pointwise
        } else if (const auto* d = std::get_if<Dense>(&n.kind)) {
            const std::int64_t cin = input_channels_of(graph, shapes, n.id);
            total += static_cast<std::int64_t>(d->out_units) * cin;
        }
    }
    return total;
}

}  // namespace monas
