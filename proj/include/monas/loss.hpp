#pragma once

// Softmax cross-entropy over logits, with hard integer targets or soft
// per-row distributions. Computed via log-sum-exp with max subtraction; the
// gradient is (softmax(logits) - target) / batch.

#include <cmath>
#include <variant>
#include <vector>

#include "monas/error.hpp"
#include "monas/tensor.hpp"

namespace monas {

inline Tensor softmax_rows(const Tensor& logits) {
    const int batch = logits.dim(0), classes = logits.dim(1);
    Tensor probs(logits.shape());
    for (int b = 0; b < batch; ++b) {
        double mx = logits.at2(b, 0);
        for (int k = 1; k < classes; ++k) mx = std::max(mx, logits.at2(b, k));
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) {
            const double e = std::exp(logits.at2(b, k) - mx);
            probs.at2(b, k) = e;
            sum += e;
        }
        for (int k = 0; k < classes; ++k) probs.at2(b, k) /= sum;
    }
    return probs;
}

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;
};

using LossTargets = std::variant<std::vector<int>, Tensor>;

inline LossResult softmax_crossentropy(const Tensor& logits, const LossTargets& targets) {
    if (logits.rank() != 2) throw Error("shape_mismatch", "logits must be (batch, classes)");
    if (!logits.all_finite()) throw Error("non_finite", "logits contain NaN or infinity");
    const int batch = logits.dim(0), classes = logits.dim(1);

    const std::vector<int>* hard = std::get_if<std::vector<int>>(&targets);
    const Tensor* soft = std::get_if<Tensor>(&targets);
    if (hard) {
        if (static_cast<int>(hard->size()) != batch)
            throw Error("bad_target", "expected " + std::to_string(batch) + " labels, got " +
                                          std::to_string(hard->size()));
        for (int t : *hard)
            if (t < 0 || t >= classes)
                throw Error("bad_target", "label " + std::to_string(t) + " out of range");
    } else {
        if (soft->shape() != logits.shape())
            throw Error("bad_target", "soft targets " + shape_str(soft->shape()) +
                                          " must match logits " + shape_str(logits.shape()));
        for (int b = 0; b < batch; ++b) {
            double s = 0.0;
            for (int k = 0; k < classes; ++k) s += soft->at2(b, k);
            if (std::abs(s - 1.0) > 1e-6)
                throw Error("bad_target", "soft target row " + std::to_string(b) +
                                              " sums to " + std::to_string(s));
        }
    }

    LossResult result;
    result.grad_logits = Tensor(logits.shape());
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        double mx = logits.at2(b, 0);
        for (int k = 1; k < classes; ++k) mx = std::max(mx, logits.at2(b, k));
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(logits.at2(b, k) - mx);
        const double lse = mx + std::log(sum);
        if (hard) {
            total += lse - logits.at2(b, (*hard)[b]);
        } else {
            for (int k = 0; k < classes; ++k)
                total += soft->at2(b, k) * (lse - logits.at2(b, k));
        }
        for (int k = 0; k < classes; ++k) {
            const double p = std::exp(logits.at2(b, k) - lse);
            const double t = hard ? (k == (*hard)[b] ? 1.0 : 0.0) : soft->at2(b, k);
            result.grad_logits.at2(b, k) = (p - t) / batch;
        }
    }
    result.loss = std::max(0.0, total / batch);  // clamp -0.0 from rounding
    return result;
}

/// Mean KL divergence between reference and candidate output distributions,
/// computed from logits. Zero iff the distributions match; this is the
/// reported distance for distillation repair (its gradient in the candidate
/// logits equals the cross-entropy gradient against the reference softmax).
inline double mean_kl_from_logits(const Tensor& ref_logits, const Tensor& cand_logits) {
    if (ref_logits.shape() != cand_logits.shape())
        throw Error("shape_mismatch", "logit shapes differ");
    const int batch = ref_logits.dim(0), classes = ref_logits.dim(1);
    auto row_lse = [classes](const Tensor& t, int b) {
        double mx = t.at2(b, 0);
        for (int k = 1; k < classes; ++k) mx = std::max(mx, t.at2(b, k));
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(t.at2(b, k) - mx);
        return mx + std::log(sum);
    };
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double lr = row_lse(ref_logits, b), lc = row_lse(cand_logits, b);
        for (int k = 0; k < classes; ++k) {
            const double logp = ref_logits.at2(b, k) - lr;
            const double logq = cand_logits.at2(b, k) - lc;
            total += std::exp(logp) * (logp - logq);
        }
    }
    return std::max(0.0, total / batch);
}

}  // namespace monas
