#pragma once

// Gaussian kernel density estimation over the population's cheap objectives,
// and the two inverse-density sampling distributions built on it (parent
// selection and child acceptance).
//
// Fitting z-scores each dimension first (degenerate dimensions fall back to
// unit scale), picks a per-dimension bandwidth by the multivariate normal
// reference rule h_j = s_j * (4 / ((d+2) n))^(1/(d+4)) floored at 1e-3, and
// evaluates densities in raw space (the z-score Jacobian is included, so the
// density integrates to one). A density floor keeps inverse weights bounded
// for far-out points.

#include <cmath>
#include <vector>

#include "monas/error.hpp"
#include "monas/rng.hpp"

namespace monas {

inline constexpr double kKdeBandwidthFloor = 1e-3;
inline constexpr double kKdeDensityFloor = 1e-12;

struct KdeEstimator {
    std::vector<std::vector<double>> points_z;  // fitted points, z-scored
    std::vector<double> mean;                   // per-dimension normalization
    std::vector<double> stddev;                 // floored to 1 when degenerate
    std::vector<double> bandwidth;              // per-dimension, in z-space
    double density_floor = kKdeDensityFloor;

    std::size_t dims() const { return mean.size(); }

    double density(const std::vector<double>& raw) const {
        if (raw.size() != dims())
            throw Error("shape_mismatch", "kde point arity " + std::to_string(raw.size()) +
                                              ", fitted " + std::to_string(dims()));
        static constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
        double jacobian = 1.0;
        std::vector<double> z(dims());
        for (std::size_t j = 0; j < dims(); ++j) {
            z[j] = (raw[j] - mean[j]) / stddev[j];
            jacobian *= stddev[j];
        }
        double sum = 0.0;
        for (const auto& p : points_z) {
            double k = 1.0;
            for (std::size_t j = 0; j < dims(); ++j) {
                const double u = (z[j] - p[j]) / bandwidth[j];
                k *= inv_sqrt_2pi / bandwidth[j] * std::exp(-0.5 * u * u);
            }
            sum += k;
        }
        const double value = sum / (static_cast<double>(points_z.size()) * jacobian);
        return value > density_floor ? value : density_floor;
    }
};

inline KdeEstimator fit_kde(const std::vector<std::vector<double>>& points) {
    if (points.empty()) throw Error("empty_data", "kde needs at least one point");
    const std::size_t n = points.size(), d = points[0].size();
    for (const auto& p : points)
        if (p.size() != d) throw Error("shape_mismatch", "kde points differ in arity");

    KdeEstimator kde;
    kde.mean.assign(d, 0.0);
    kde.stddev.assign(d, 0.0);
    for (const auto& p : points)
        for (std::size_t j = 0; j < d; ++j) kde.mean[j] += p[j];
    for (std::size_t j = 0; j < d; ++j) kde.mean[j] /= static_cast<double>(n);
    for (const auto& p : points)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = p[j] - kde.mean[j];
            kde.stddev[j] += c * c;
        }
    for (std::size_t j = 0; j < d; ++j) {
        kde.stddev[j] = n > 1 ? std::sqrt(kde.stddev[j] / static_cast<double>(n - 1)) : 0.0;
        if (kde.stddev[j] < 1e-12) kde.stddev[j] = 1.0;  // degenerate dimension
    }

    kde.points_z.reserve(n);
    for (const auto& p : points) {
        std::vector<double> z(d);
        for (std::size_t j = 0; j < d; ++j) z[j] = (p[j] - kde.mean[j]) / kde.stddev[j];
        kde.points_z.push_back(std::move(z));
    }

    // Sample std of the z-scored coordinates is 1 by construction except for
    // degenerate dimensions, where it is 0 and the floor takes over.
    const double rate = std::pow(4.0 / ((static_cast<double>(d) + 2.0) * static_cast<double>(n)),
                                 1.0 / (static_cast<double>(d) + 4.0));
    kde.bandwidth.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double sz = 0.0, mz = 0.0;
        for (const auto& p : kde.points_z) mz += p[j];
        mz /= static_cast<double>(n);
        for (const auto& p : kde.points_z) sz += (p[j] - mz) * (p[j] - mz);
        sz = n > 1 ? std::sqrt(sz / static_cast<double>(n - 1)) : 0.0;
        kde.bandwidth[j] = std::max(kKdeBandwidthFloor, sz * rate);
    }
    return kde;
}

// ---------------------------------------------------------------------------
// Inverse-density sampling
// ---------------------------------------------------------------------------

/// p_i = c / density_i with c chosen so the probabilities sum to one.
inline std::vector<double> inverse_density_probs(const std::vector<double>& densities) {
    if (densities.empty()) throw Error("empty_data", "no densities");
    double total = 0.0;
    for (double d : densities) {
        if (!(d > 0.0)) throw Error("bad_config", "densities must be positive");
        total += 1.0 / d;
    }
    std::vector<double> probs(densities.size());
    for (std::size_t i = 0; i < densities.size(); ++i) probs[i] = (1.0 / densities[i]) / total;
    return probs;
}

inline std::vector<double> uniform_probs(std::size_t n) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

/// One draw from a discrete distribution.
inline std::size_t sample_index(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;  // guard against rounding at the top end
}

/// Sample `count` distinct indices by sequential renormalization: draw one,
/// remove it, renormalize, repeat. Returns all indices when count >= n.
inline std::vector<std::size_t> sample_without_replacement(std::vector<double> probs,
                                                           std::size_t count, Rng& rng) {
    std::vector<std::size_t> alive(probs.size());
    for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
    if (count >= probs.size()) return alive;

    std::vector<std::size_t> chosen;
    while (chosen.size() < count) {
        double total = 0.0;
        for (std::size_t i = 0; i < alive.size(); ++i) total += probs[alive[i]];
        const double u = rng.uniform() * total;
        double acc = 0.0;
        std::size_t pick = alive.size() - 1;
        for (std::size_t i = 0; i < alive.size(); ++i) {
            acc += probs[alive[i]];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        chosen.push_back(alive[pick]);
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace monas
