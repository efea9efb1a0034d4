#pragma once

// Pareto dominance, front extraction, and the hypervolume progress metric.
// All objectives are minimized everywhere in this library.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "monas/error.hpp"
#include "monas/objectives.hpp"

namespace monas {

/// Strict Pareto dominance: a is nowhere worse and somewhere strictly better.
inline bool dominates(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw Error("shape_mismatch", "objective vectors differ in length");
    bool strictly_better = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) return false;
        if (a[i] < b[i]) strictly_better = true;
    }
    return strictly_better;
}

inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
    if (a.names != b.names) throw Error("shape_mismatch", "objective names differ");
    return dominates(a.concat(), b.concat());
}

/// Indices of the non-dominated items. Items with identical objective vectors
/// collapse to the one with the smallest birth key (earliest born wins).
inline std::vector<std::size_t> pareto_indices(
    const std::vector<std::vector<double>>& objectives,
    const std::vector<std::uint64_t>& birth_keys = {}) {
    const std::size_t n = objectives.size();
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < n; ++i) {
        bool drop = false;
        for (std::size_t j = 0; j < n && !drop; ++j) {
            if (i == j) continue;
            if (dominates(objectives[j], objectives[i])) drop = true;
            if (objectives[j] == objectives[i]) {
                // duplicate in objective space: keep the earliest
                const std::uint64_t ki = birth_keys.empty() ? i : birth_keys[i];
                const std::uint64_t kj = birth_keys.empty() ? j : birth_keys[j];
                if (kj < ki || (kj == ki && j < i)) drop = true;
            }
        }
        if (!drop) kept.push_back(i);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Hypervolume (exact sweep, 2-D and 3-D)
// ---------------------------------------------------------------------------

namespace pareto_detail {

inline double hv2(std::vector<std::pair<double, double>> pts, double rx, double ry) {
    // Points not strictly inside the reference box contribute nothing.
    pts.erase(std::remove_if(pts.begin(), pts.end(),
                             [&](const auto& p) { return p.first >= rx || p.second >= ry; }),
              pts.end());
    if (pts.empty()) return 0.0;
    std::sort(pts.begin(), pts.end());
    double hv = 0.0;
    double best_y = ry;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        best_y = std::min(best_y, pts[i].second);
        const double next_x = i + 1 < pts.size() ? pts[i + 1].first : rx;
        if (next_x > pts[i].first) hv += (next_x - pts[i].first) * (ry - best_y);
    }
    return hv;
}

}  // namespace pareto_detail

/// Lebesgue measure of the region dominated by `front` within the box below
/// `reference`. Points outside the box are clipped away (they contribute
/// nothing); dominated points change nothing.
inline double hypervolume(const std::vector<std::vector<double>>& front,
                          const std::vector<double>& reference) {
    const std::size_t d = reference.size();
    if (d != 2 && d != 3)
        throw Error("bad_config", "hypervolume supports 2 or 3 objectives, got " +
                                      std::to_string(d));
    for (const auto& p : front)
        if (p.size() != d) throw Error("shape_mismatch", "front point arity mismatch");

    if (d == 2) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : front) pts.emplace_back(p[0], p[1]);
        return pareto_detail::hv2(std::move(pts), reference[0], reference[1]);
    }

    // 3-D: sweep the third axis; each slab is the 2-D hypervolume of the
    // projection of all points at or below the slab.
    std::vector<std::vector<double>> pts;
    for (const auto& p : front)
        if (p[0] < reference[0] && p[1] < reference[1] && p[2] < reference[2]) pts.push_back(p);
    if (pts.empty()) return 0.0;
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a[2] < b[2]; });
    double hv = 0.0;
    std::vector<std::pair<double, double>> proj;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        proj.emplace_back(pts[i][0], pts[i][1]);
        const double z_next = i + 1 < pts.size() ? pts[i + 1][2] : reference[2];
        if (z_next > pts[i][2])
            hv += (z_next - pts[i][2]) * pareto_detail::hv2(proj, reference[0], reference[1]);
    }
    return hv;
}

}  // namespace monas
