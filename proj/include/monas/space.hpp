#pragma once

// Search-space construction: the two supported spaces (whole-network search
// and cell search), trivial initial populations, and expansion of a cell
// fragment through a macro skeleton.
//
// Cell search keeps per-node tags (instance, local). Expansion instantiates
// the same fragment once per repeat; mutation operators later look up nodes
// by their local id to replicate a change across every instance. Channel
// widths stored on a fragment refer to the last block; earlier blocks run at
// the width divided by two per remaining downsampling step.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "monas/graph.hpp"
#include "monas/weights.hpp"

namespace monas {

enum class SearchSpace { WholeNet, Cells };

inline const char* search_space_name(SearchSpace s) {
    return s == SearchSpace::WholeNet ? "whole_net" : "cells";
}

struct MacroBlock {
    int cell_repeats = 2;
    bool downsample = false;  // stride-2 pooling in front of this block
    bool operator==(const MacroBlock&) const = default;
};

struct MacroSpec {
    std::vector<MacroBlock> blocks{{2, false}, {2, true}};
    int stem_channels = 4;
    int last_block_filters = 16;
    bool operator==(const MacroSpec&) const = default;
};

/// One repeatable cell: a fragment with a single entry port and a single exit
/// node. Local node ids are 0..n-1; conv widths are last-block values.
struct CellFragment {
    std::vector<GraphNode> nodes;  // ids are local
    std::vector<GraphEdge> edges;  // local ids; entry edges come from local id -1
    int exit = 0;                  // local id of the node producing the cell output
    bool operator==(const CellFragment&) const = default;
};

inline CellFragment single_conv_cell(bool separable, int filters) {
    CellFragment cell;
    if (separable)
        cell.nodes.push_back({0, SeparableConv2d{3, 1, filters, true}, std::nullopt});
    else
        cell.nodes.push_back({0, Conv2d{3, 1, filters, true}, std::nullopt});
    cell.nodes.push_back({1, BatchNorm{}, std::nullopt});
    cell.nodes.push_back({2, Relu{}, std::nullopt});
    cell.edges = {{-1, 0, 0}, {0, 1, 0}, {1, 2, 0}};
    cell.exit = 2;
    return cell;
}

namespace detail {

inline int scaled_width(int last_block_width, int block_width, int f) {
    // width in this block for a conv carrying `f` filters in the last block
    const long long scaled = static_cast<long long>(f) * block_width;
    if (scaled % last_block_width != 0)
        throw Error("channel_mismatch",
                    "cell width " + std::to_string(f) + " not divisible across blocks (" +
                        std::to_string(block_width) + "/" + std::to_string(last_block_width) + ")");
    return static_cast<int>(scaled / last_block_width);
}

}  // namespace detail

/// Instantiate `cell` through the macro skeleton:
/// input -> stem Conv-BatchNorm-ReLU -> blocks of repeated cells (downsample
/// blocks prefixed by stride-2 max pooling, widths doubling) -> global average
/// pool -> dense classifier -> softmax head.
inline ArchGraph expand_cell(const CellFragment& cell, const MacroSpec& macro, InputSpec input_spec,
                             int num_classes) {
    if (macro.blocks.empty()) throw Error("bad_macro", "macro skeleton needs at least one block");
    if (cell.nodes.empty()) throw Error("bad_macro", "cell fragment is empty");
    for (const auto& e : cell.edges)
        if (e.src == -1 && e.dst != 0)
            throw Error("bad_macro", "cell entry must feed local node 0");

    // Per-block widths: the last block runs at last_block_filters, every
    // downsampling step backwards halves the width.
    const int num_blocks = static_cast<int>(macro.blocks.size());
    std::vector<int> widths(num_blocks);
    int w = macro.last_block_filters;
    for (int b = num_blocks - 1; b >= 0; --b) {
        widths[b] = w;
        if (macro.blocks[b].downsample) {
            if (w % 2 != 0)
                throw Error("channel_mismatch",
                            "cannot halve " + std::to_string(w) + " filters before a downsample");
            w /= 2;
        }
    }

    ArchGraph g;
    g.input_spec = input_spec;
    g.num_classes = num_classes;
    int next = 0;
    auto add_node = [&](LayerKind kind, std::optional<CellTag> tag = std::nullopt) {
        g.nodes.push_back({next, std::move(kind), tag});
        return next++;
    };

    const int input_id = add_node(InputLayer{});
    int tail = add_node(Conv2d{3, 1, macro.stem_channels, true});
    g.edges.push_back({input_id, tail, 0});
    int bn = add_node(BatchNorm{});
    g.edges.push_back({tail, bn, 0});
    tail = add_node(Relu{});
    g.edges.push_back({bn, tail, 0});

    int instance = 0;
    for (int b = 0; b < num_blocks; ++b) {
        if (macro.blocks[b].downsample) {
            const int pool = add_node(MaxPool{2, 2});
            g.edges.push_back({tail, pool, 0});
            tail = pool;
        }
        for (int r = 0; r < macro.blocks[b].cell_repeats; ++r, ++instance) {
            std::map<int, int> local_to_global;
            for (const auto& n : cell.nodes) {
                LayerKind kind = n.kind;
                if (auto* c = std::get_if<Conv2d>(&kind))
                    c->out_channels =
                        detail::scaled_width(macro.last_block_filters, widths[b], c->out_channels);
                else if (auto* s = std::get_if<SeparableConv2d>(&kind))
                    s->out_channels =
                        detail::scaled_width(macro.last_block_filters, widths[b], s->out_channels);
                local_to_global[n.id] = add_node(std::move(kind), CellTag{instance, n.id});
            }
            for (const auto& e : cell.edges) {
                const int src = e.src == -1 ? tail : local_to_global.at(e.src);
                g.edges.push_back({src, local_to_global.at(e.dst), e.port});
            }
            tail = local_to_global.at(cell.exit);
        }
    }

    const int gap = add_node(GlobalAvgPool{});
    g.edges.push_back({tail, gap, 0});
    const int dense = add_node(Dense{num_classes, true});
    g.edges.push_back({gap, dense, 0});
    const int head = add_node(SoftmaxHead{});
    g.edges.push_back({dense, head, 0});

    // Fail fast on skeletons that do not carry shapes through (e.g. more
    // downsampling than the input resolution supports).
    infer_shapes(g);
    return g;
}

/// Number of cell instances in an expanded graph (0 for whole-net graphs).
inline int cell_instance_count(const ArchGraph& graph) {
    int max_instance = -1;
    for (const auto& n : graph.nodes)
        if (n.cell) max_instance = std::max(max_instance, n.cell->instance);
    return max_instance + 1;
}

// ---------------------------------------------------------------------------
// Trivial initial populations
// ---------------------------------------------------------------------------

/// Plain-chain classification net: `blocks` Conv-BatchNorm-ReLU groups with
/// intermittent max pooling, global average pooling and a dense classifier.
inline ArchGraph conv_chain_net(const std::vector<int>& channels, bool separable,
                                const std::vector<bool>& pool_after, InputSpec input_spec,
                                int num_classes) {
    ArchGraph g;
    g.input_spec = input_spec;
    g.num_classes = num_classes;
    int next = 0;
    auto add = [&](LayerKind kind) {
        g.nodes.push_back({next, std::move(kind), std::nullopt});
        if (next > 0) g.edges.push_back({next - 1, next, 0});
        return next++;
    };
    add(InputLayer{});
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (separable)
            add(SeparableConv2d{3, 1, channels[i], true});
        else
            add(Conv2d{3, 1, channels[i], true});
        add(BatchNorm{});
        add(Relu{});
        if (i < pool_after.size() && pool_after[i]) add(MaxPool{2, 2});
    }
    add(GlobalAvgPool{});
    add(Dense{num_classes, true});
    add(SoftmaxHead{});
    return g;
}

struct SeedMember {
    ArchGraph graph;
    WeightStore weights;
};

/// The four trivial starting networks, parameter counts strictly increasing.
/// Whole-net space: three-conv chains (two separable, two plain) at two
/// widths. Cell space: single-layer cells (separable/plain) expanded through
/// the macro skeleton at two last-block widths.
inline std::vector<SeedMember> init_trivial_population(SearchSpace space, std::uint64_t seed,
                                                       InputSpec input_spec, int num_classes,
                                                       const MacroSpec& macro = {}) {
    std::vector<SeedMember> members;
    auto push = [&](ArchGraph g, std::uint64_t stream) {
        Rng rng(derive_seed(seed, stream, 0x5eed));
        WeightStore w = init_weights(g, rng);
        members.push_back({std::move(g), std::move(w)});
    };

    if (space == SearchSpace::WholeNet) {
        const std::vector<bool> pools{true, true, false};
        push(conv_chain_net({8, 16, 16}, true, pools, input_spec, num_classes), 0);
        push(conv_chain_net({16, 32, 32}, true, pools, input_spec, num_classes), 1);
        push(conv_chain_net({8, 16, 16}, false, pools, input_spec, num_classes), 2);
        push(conv_chain_net({16, 32, 32}, false, pools, input_spec, num_classes), 3);
    } else {
        MacroSpec wide = macro;
        wide.last_block_filters *= 2;
        push(expand_cell(single_conv_cell(true, macro.last_block_filters), macro, input_spec,
                         num_classes),
             0);
        push(expand_cell(single_conv_cell(true, wide.last_block_filters), wide, input_spec,
                         num_classes),
             1);
        push(expand_cell(single_conv_cell(false, macro.last_block_filters), macro, input_spec,
                         num_classes),
             2);
        push(expand_cell(single_conv_cell(false, wide.last_block_filters), wide, input_spec,
                         num_classes),
             3);
    }

    // The four nets are constructed in ascending parameter order; enforce it.
    for (std::size_t i = 1; i < members.size(); ++i)
        if (count_params(members[i].graph) <= count_params(members[i - 1].graph))
            throw Error("bad_seed_population", "trivial nets are not strictly increasing in size");
    return members;
}

}  // namespace monas
