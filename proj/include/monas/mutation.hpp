#pragma once

// Random child generation on top of the morphism operators: uniform operator
// choice, uniform site choice among applicable sites, bounded retries, and
// replication across cell instances in cell-based search. Whole-net search
// applies 1-3 operators in sequence; cell search applies exactly one operator
// to every occurrence of the cell.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "monas/morphisms.hpp"

namespace monas {

struct MutationContext {
    SearchSpace space = SearchSpace::WholeNet;
    std::vector<MorphKind> enabled = all_morph_kinds();
    SearchSpaceConstraint constraint;
    RepairConfig repair;
    const Dataset* repair_data = nullptr;  // required when ANMs are enabled with repair
    bool repair_enabled = true;            // false: structural ANMs only (fresh-init children)
    int ops_min = 1;
    int ops_max = 3;
    int max_retries = 10;
};

namespace morph_detail {

inline bool cell_site_ok(const GraphNode& n, bool cells_only) {
    return !cells_only || (n.cell && n.cell->instance == 0);
}

inline std::vector<int> insert_sites(const ArchGraph& g, const std::map<int, Shape>& shapes,
                                     const SearchSpaceConstraint& constraint, bool cells_only) {
    std::vector<int> sites;
    for (const auto& n : g.nodes) {
        const bool stem = std::holds_alternative<InputLayer>(n.kind);
        if (!std::holds_alternative<Relu>(n.kind) && !(stem && !cells_only)) continue;
        if (!stem && !cell_site_ok(n, cells_only)) continue;
        const Shape& s = shapes.at(n.id);
        if (s.size() == 4 && s[1] >= constraint.min_filters_per_conv) sites.push_back(n.id);
    }
    return sites;
}

inline std::vector<int> widen_sites(const ArchGraph& g, bool cells_only) {
    std::vector<int> sites;
    for (const auto& n : g.nodes)
        if (is_conv_like(n.kind) && cell_site_ok(n, cells_only) &&
            scan_downstream(g, n.id).ok)
            sites.push_back(n.id);
    return sites;
}

inline std::vector<std::pair<int, int>> skip_pairs(const ArchGraph& g,
                                                   const std::map<int, Shape>& shapes, bool concat,
                                                   bool cells_only) {
    const auto order = g.topo_order();
    std::vector<std::pair<int, int>> pairs;
    if (!order) return pairs;
    for (std::size_t i = 0; i < order->size(); ++i) {
        const GraphNode& src = g.node((*order)[i]);
        if (shapes.at(src.id).size() != 4) continue;
        if (cells_only && !cell_site_ok(src, true) &&
            !std::holds_alternative<InputLayer>(src.kind))
            continue;
        for (std::size_t j = i + 1; j < order->size(); ++j) {
            const GraphNode& dst = g.node((*order)[j]);
            if (std::holds_alternative<InputLayer>(dst.kind)) continue;
            if (!cell_site_ok(dst, cells_only)) continue;
            if (cells_only) {
                // skips stay inside one instance so they replicate cleanly
                if (!src.cell || !dst.cell || src.cell->instance != dst.cell->instance) continue;
            }
            const Shape& a = shapes.at(dst.id);
            const Shape& b = shapes.at(src.id);
            if (a.size() != 4) continue;
            if (a[2] != b[2] || a[3] != b[3]) continue;
            if (!concat && a[1] != b[1]) continue;
            if (g.out_edges(dst.id).empty()) continue;
            if (concat && !scan_downstream(g, dst.id).ok) continue;
            pairs.emplace_back(src.id, dst.id);
        }
    }
    return pairs;
}

inline std::vector<int> remove_sites(const ArchGraph& g, const std::map<int, Shape>& shapes,
                                     const SearchSpaceConstraint& constraint, bool cells_only,
                                     int instances) {
    int convs = 0;
    for (const auto& n : g.nodes) convs += is_conv_like(n.kind);
    std::vector<int> sites;
    for (const auto& n : g.nodes) {
        if (!cell_site_ok(n, cells_only)) continue;
        if (!removable(g, shapes, n.id)) continue;
        if (is_conv_like(n.kind)) {
            const int lost = cells_only ? instances : 1;
            if (convs - lost < constraint.min_convs) continue;
        }
        sites.push_back(n.id);
    }
    return sites;
}

inline std::vector<int> prune_sites(const ArchGraph& g, const SearchSpaceConstraint& constraint,
                                    bool cells_only) {
    std::vector<int> sites;
    for (const auto& n : g.nodes) {
        if (!is_conv_like(n.kind) || !cell_site_ok(n, cells_only)) continue;
        const int f = out_channels_of(n.kind);
        // Half is the harsher fraction; demanding it keeps both fractions legal.
        if (f < 4 || f / 2 < constraint.min_filters_per_conv) continue;
        if (!scan_downstream(g, n.id).ok) continue;
        sites.push_back(n.id);
    }
    return sites;
}

inline std::vector<int> separable_sites(const ArchGraph& g, bool cells_only) {
    std::vector<int> sites;
    for (const auto& n : g.nodes)
        if (const auto* c = std::get_if<Conv2d>(&n.kind))
            if (c->kernel > 1 && cell_site_ok(n, cells_only)) sites.push_back(n.id);
    return sites;
}

inline std::optional<int> find_cell_node(const ArchGraph& g, int instance, int local) {
    for (const auto& n : g.nodes)
        if (n.cell && n.cell->instance == instance && n.cell->local == local) return n.id;
    return std::nullopt;
}

inline int max_cell_local(const ArchGraph& g) {
    int m = -1;
    for (const auto& n : g.nodes)
        if (n.cell) m = std::max(m, n.cell->local);
    return m;
}

}  // namespace morph_detail

namespace morph_detail {

struct WorkingChild {
    ArchGraph graph;
    WeightStore weights;
    std::set<int> affected;
    std::vector<AppliedOp> ops;
    double delta_before = 0.0;
    double delta_after = 0.0;
};

inline void merge_outcome(WorkingChild& child, MutationOutcome&& step) {
    child.graph = std::move(step.graph);
    child.weights = std::move(step.weights);
    child.affected.insert(step.affected_nodes.begin(), step.affected_nodes.end());
    for (auto& op : step.ops) child.ops.push_back(op);
    child.delta_before += step.delta_before;
    child.delta_after += step.delta_after;
}

/// Apply `kind` at one uniformly chosen applicable site of a whole-net graph.
inline MutationOutcome apply_whole_net(const ArchGraph& g, const WeightStore& w, MorphKind kind,
                                       const MutationContext& ctx, Rng& rng) {
    const auto shapes = infer_shapes(g);
    auto pick = [&rng](const auto& sites) -> decltype(sites[0]) {
        if (sites.empty()) throw Error("bad_site", "no applicable site");
        return sites[rng.uniform_int(sites.size())];
    };
    auto batches = [&]() {
        if (!ctx.repair_data) throw Error("bad_config", "ANM repair needs a dataset");
        return make_repair_batches(*ctx.repair_data, ctx.repair, rng);
    };

    switch (kind) {
        case MorphKind::InsertConvBlock: {
            const int site = pick(insert_sites(g, shapes, ctx.constraint, false));
            return insert_conv_block(g, w, site, shapes.at(site)[1], rng);
        }
        case MorphKind::WidenConv:
            return widen_conv(g, w, pick(widen_sites(g, false)), 2, rng);
        case MorphKind::AddSkipAdd: {
            const auto [src, dst] = pick(skip_pairs(g, shapes, false, false));
            return add_skip(g, w, src, dst, false, rng);
        }
        case MorphKind::AddSkipConcat: {
            const auto [src, dst] = pick(skip_pairs(g, shapes, true, false));
            return add_skip(g, w, src, dst, true, rng);
        }
        case MorphKind::RemoveLayer: {
            const int site = pick(remove_sites(g, shapes, ctx.constraint, false, 1));
            if (!ctx.repair_enabled) {
                MutationOutcome r;
                r.graph = g;
                r.weights = w;
                remove_node_structural(r.graph, r.weights, site, r.affected_nodes);
                require_child_valid(r.graph, ctx.constraint);
                r.ops.push_back({MorphKind::RemoveLayer, {site}, 0.0, 0.0});
                return r;
            }
            return remove_layer(g, w, site, ctx.constraint, ctx.repair, batches());
        }
        case MorphKind::PruneFilters: {
            const int site = pick(prune_sites(g, ctx.constraint, false));
            const KeepFraction frac =
                rng.uniform_int(2) == 0 ? KeepFraction::Half : KeepFraction::ThreeQuarters;
            if (!ctx.repair_enabled) {
                MutationOutcome r;
                r.graph = g;
                r.weights = w;
                const auto scan = scan_downstream(g, site);
                const auto removed = prune_site_filters(r.graph, r.weights, site, frac,
                                                        ctx.constraint.min_filters_per_conv);
                for (int bn : scan.batchnorms) bn_remove_channels(r.weights.at(bn), removed);
                for (int a : scan.absorbers)
                    absorber_remove_input(r.graph.node(a).kind, r.weights.at(a), removed);
                require_child_valid(r.graph, ctx.constraint);
                r.affected_nodes.insert(site);
                r.ops.push_back({MorphKind::PruneFilters, {site}, 0.0, 0.0});
                return r;
            }
            return prune_filters(g, w, site, frac, ctx.constraint, ctx.repair, batches());
        }
        case MorphKind::ToSeparable: {
            const int site = pick(separable_sites(g, false));
            if (!ctx.repair_enabled) {
                MutationOutcome r;
                r.graph = g;
                r.weights = w;
                to_separable_structural(r.graph, r.weights, site);
                require_child_valid(r.graph, ctx.constraint);
                r.affected_nodes.insert(site);
                r.ops.push_back({MorphKind::ToSeparable, {site}, 0.0, 0.0});
                return r;
            }
            return to_separable(g, w, site, ctx.constraint, ctx.repair, batches());
        }
    }
    throw Error("bad_config", "unknown operator");
}

/// Apply `kind` once per cell instance (same local site everywhere), then
/// validate and repair the union of affected nodes in one pass.
inline MutationOutcome apply_cells(const ArchGraph& g, const WeightStore& w, MorphKind kind,
                                   const MutationContext& ctx, Rng& rng) {
    const int instances = cell_instance_count(g);
    if (instances == 0) throw Error("bad_site", "graph carries no cell tags");
    const auto shapes = infer_shapes(g);
    auto pick = [&rng](const auto& sites) -> decltype(sites[0]) {
        if (sites.empty()) throw Error("bad_site", "no applicable site");
        return sites[rng.uniform_int(sites.size())];
    };
    auto local_of = [&](int id) { return g.node(id).cell->local; };

    WorkingChild child{g, w, {}, {}, 0.0, 0.0};
    const int fresh_local = max_cell_local(g) + 1;
    std::vector<int> site_locals;          // cell-local coordinates of the chosen site
    KeepFraction frac = KeepFraction::Half;
    if (kind == MorphKind::PruneFilters)
        frac = rng.uniform_int(2) == 0 ? KeepFraction::Half : KeepFraction::ThreeQuarters;

    switch (kind) {
        case MorphKind::InsertConvBlock:
            site_locals = {local_of(pick(insert_sites(g, shapes, ctx.constraint, true)))};
            break;
        case MorphKind::WidenConv:
            site_locals = {local_of(pick(widen_sites(g, true)))};
            break;
        case MorphKind::AddSkipAdd:
        case MorphKind::AddSkipConcat: {
            const auto [src, dst] =
                pick(skip_pairs(g, shapes, kind == MorphKind::AddSkipConcat, true));
            site_locals = {local_of(src), local_of(dst)};
            break;
        }
        case MorphKind::RemoveLayer:
            site_locals = {
                local_of(pick(remove_sites(g, shapes, ctx.constraint, true, instances)))};
            break;
        case MorphKind::PruneFilters:
            site_locals = {local_of(pick(prune_sites(g, ctx.constraint, true)))};
            break;
        case MorphKind::ToSeparable:
            site_locals = {local_of(pick(separable_sites(g, true)))};
            break;
    }

    for (int inst = 0; inst < instances; ++inst) {
        std::vector<int> ids;
        for (int local : site_locals) {
            const auto id = find_cell_node(child.graph, inst, local);
            if (!id)
                throw Error("bad_site", "cell instance " + std::to_string(inst) +
                                            " lacks local node " + std::to_string(local));
            ids.push_back(*id);
        }
        MutationOutcome step;
        switch (kind) {
            case MorphKind::InsertConvBlock: {
                const auto inst_shapes = infer_shapes(child.graph);
                step = insert_conv_block(child.graph, child.weights, ids[0],
                                         inst_shapes.at(ids[0])[1], rng);
                break;
            }
            case MorphKind::WidenConv:
                step = widen_conv(child.graph, child.weights, ids[0], 2, rng);
                break;
            case MorphKind::AddSkipAdd:
                step = add_skip(child.graph, child.weights, ids[0], ids[1], false, rng);
                break;
            case MorphKind::AddSkipConcat:
                step = add_skip(child.graph, child.weights, ids[0], ids[1], true, rng);
                break;
            case MorphKind::RemoveLayer: {
                step.graph = child.graph;
                step.weights = child.weights;
                remove_node_structural(step.graph, step.weights, ids[0], step.affected_nodes);
                step.ops.push_back({MorphKind::RemoveLayer, {ids[0]}, 0.0, 0.0});
                break;
            }
            case MorphKind::PruneFilters: {
                step.graph = child.graph;
                step.weights = child.weights;
                const auto scan = scan_downstream(child.graph, ids[0]);
                if (!scan.ok) throw Error("bad_site", "prune blocked in instance");
                const auto removed = prune_site_filters(step.graph, step.weights, ids[0], frac,
                                                        ctx.constraint.min_filters_per_conv);
                for (int bn : scan.batchnorms) bn_remove_channels(step.weights.at(bn), removed);
                for (int a : scan.absorbers)
                    absorber_remove_input(step.graph.node(a).kind, step.weights.at(a), removed);
                step.affected_nodes.insert(ids[0]);
                step.affected_nodes.insert(scan.absorbers.begin(), scan.absorbers.end());
                step.affected_nodes.insert(scan.batchnorms.begin(), scan.batchnorms.end());
                step.ops.push_back({MorphKind::PruneFilters, {ids[0]}, 0.0, 0.0});
                break;
            }
            case MorphKind::ToSeparable: {
                step.graph = child.graph;
                step.weights = child.weights;
                to_separable_structural(step.graph, step.weights, ids[0]);
                step.affected_nodes.insert(ids[0]);
                for (int s : child.graph.successors(ids[0])) step.affected_nodes.insert(s);
                step.ops.push_back({MorphKind::ToSeparable, {ids[0]}, 0.0, 0.0});
                break;
            }
        }
        // Tag freshly inserted nodes so future mutations replicate over them.
        for (std::size_t k = 0; k < step.new_nodes.size(); ++k)
            step.graph.find_node(step.new_nodes[k])->cell =
                CellTag{inst, fresh_local + static_cast<int>(k)};
        merge_outcome(child, std::move(step));
    }

    require_child_valid(child.graph, ctx.constraint);

    MutationOutcome r;
    r.graph = std::move(child.graph);
    r.weights = std::move(child.weights);
    r.affected_nodes = std::move(child.affected);
    r.delta_before = 0.0;
    r.delta_after = 0.0;
    // Collapse the per-instance records into one op entry.
    AppliedOp op{kind, {}, 0.0, 0.0};
    for (const auto& o : child.ops) op.sites.insert(op.sites.end(), o.sites.begin(), o.sites.end());
    if (!is_exact_morphism(kind) && ctx.repair_enabled) {
        if (!ctx.repair_data) throw Error("bad_config", "ANM repair needs a dataset");
        const auto batches = make_repair_batches(*ctx.repair_data, ctx.repair, rng);
        const auto rep = repair_distill(g, w, r.graph, r.weights, r.affected_nodes, ctx.repair,
                                        batches);
        r.delta_before = op.delta_before = rep.delta_before;
        r.delta_after = op.delta_after = rep.delta_after;
    }
    r.ops.push_back(std::move(op));
    return r;
}

}  // namespace morph_detail

/// Generate one child from a parent: uniform operator and site sampling with
/// bounded retries. Whole-net search applies Uniform{ops_min..ops_max}
/// operators in sequence; cell search applies exactly one operator to all
/// cell occurrences. Throws Error("exhausted") when no applicable operator
/// remains after max_retries attempts (the caller resamples the parent).
inline MutationOutcome generate_child(const ArchGraph& parent_graph,
                                      const WeightStore& parent_weights,
                                      const MutationContext& ctx, Rng& rng) {
    if (ctx.enabled.empty()) throw Error("bad_config", "no operators enabled");
    morph_detail::WorkingChild child{parent_graph, parent_weights, {}, {}, 0.0, 0.0};
    const int count =
        ctx.space == SearchSpace::WholeNet
            ? ctx.ops_min + static_cast<int>(rng.uniform_int(ctx.ops_max - ctx.ops_min + 1))
            : 1;

    for (int slot = 0; slot < count; ++slot) {
        bool applied = false;
        for (int attempt = 0; attempt < ctx.max_retries && !applied; ++attempt) {
            const MorphKind kind = ctx.enabled[rng.uniform_int(ctx.enabled.size())];
            try {
                MutationOutcome step =
                    ctx.space == SearchSpace::WholeNet
                        ? morph_detail::apply_whole_net(child.graph, child.weights, kind, ctx, rng)
                        : morph_detail::apply_cells(child.graph, child.weights, kind, ctx, rng);
                morph_detail::merge_outcome(child, std::move(step));
                applied = true;
            } catch (const Error& e) {
                if (e.code() == "bad_config") throw;  // misconfiguration, not a bad site
            }
        }
        if (!applied)
            throw Error("exhausted", "no applicable operator after " +
                                         std::to_string(ctx.max_retries) + " attempts");
    }
    morph_detail::require_child_valid(child.graph, ctx.constraint);

    MutationOutcome r;
    r.graph = std::move(child.graph);
    r.weights = std::move(child.weights);
    // Affected bookkeeping only references surviving nodes.
    for (int id : child.affected)
        if (r.graph.find_node(id)) r.affected_nodes.insert(id);
    r.delta_before = child.delta_before;
    r.delta_after = child.delta_after;
    r.ops = std::move(child.ops);
    return r;
}

}  // namespace monas
