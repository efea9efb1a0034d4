#pragma once

// Objective evaluation: the expensive side trains a network (SGD with cosine
// annealing) and measures validation error; the cheap side computes log10
// parameter and multiply-add counts plus an optional wall-clock latency probe.
// All objectives are minimized.

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <string>
#include <vector>

#include "monas/dataset.hpp"
#include "monas/loss.hpp"
#include "monas/network.hpp"

namespace monas {

struct ObjectiveVector {
    std::vector<double> expensive;  // error rates in [0,1]
    std::vector<double> cheap;      // log10 params, log10 MACs, optional latency
    std::vector<std::string> names;  // expensive names followed by cheap names

    bool operator==(const ObjectiveVector&) const = default;

    std::vector<double> concat() const {
        std::vector<double> all = expensive;
        all.insert(all.end(), cheap.begin(), cheap.end());
        return all;
    }
    std::size_t size() const { return expensive.size() + cheap.size(); }
};

struct TrainSchedule {
    int epochs = 20;
    double lr_init = 0.01;  // cosine-annealed to 0
    int batch_size = 64;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    bool operator==(const TrainSchedule&) const = default;
};

/// Cosine annealing from lr_init at t=0 to 0 at t=total_steps.
inline double cosine_lr(double lr_init, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return 0.0;
    const double x = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_init * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

/// Global count of SGD steps taken, for tests asserting that cheap
/// evaluation never trains.
inline std::atomic<std::uint64_t>& training_steps_total() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

namespace detail {

inline void gather_batch(const Dataset& ds, const std::vector<int>& order, std::size_t begin,
                         std::size_t end, Tensor& batch, std::vector<int>& labels) {
    const int c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    batch = Tensor({static_cast<int>(end - begin), c, h, w});
    labels.clear();
    for (std::size_t i = begin; i < end; ++i) {
        const double* src = ds.images.data() + static_cast<std::size_t>(order[i]) * stride;
        std::copy(src, src + stride, batch.data() + (i - begin) * stride);
        labels.push_back(ds.labels[order[i]]);
    }
}

/// Weight decay applies to the multiplicative weights of conv/dense layers
/// only, never to biases, BatchNorm parameters or join coefficients.
inline bool decays(const LayerKind& kind, const std::string& name) {
    if (!(name == "weight" || name == "depthwise" || name == "pointwise")) return false;
    return is_conv_like(kind) || std::holds_alternative<Dense>(kind);
}

}  // namespace detail

/// SGD with cosine annealing over `schedule.epochs` passes. Mutates `weights`
/// in place; returns the mean training loss per epoch. Deterministic for a
/// fixed schedule seed.
inline std::vector<double> train_network(const ArchGraph& graph, WeightStore& weights,
                                         const Dataset& data, const TrainSchedule& schedule) {
    if (data.size() == 0) throw Error("empty_data", "training set is empty");
    check_weights(graph, weights);
    std::vector<int> order(data.size());
    for (int i = 0; i < data.size(); ++i) order[i] = i;

    const std::int64_t steps_per_epoch =
        (data.size() + schedule.batch_size - 1) / schedule.batch_size;
    const std::int64_t total_steps = steps_per_epoch * schedule.epochs;
    std::vector<double> history;
    Rng shuffle_rng(derive_seed(schedule.seed, 0x7ea1));

    std::int64_t step = 0;
    Tensor batch;
    std::vector<int> labels;
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
        double epoch_loss = 0.0;
        for (std::int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
            const std::size_t begin = static_cast<std::size_t>(s) * schedule.batch_size;
            const std::size_t end =
                std::min(begin + schedule.batch_size, static_cast<std::size_t>(data.size()));
            detail::gather_batch(data, order, begin, end, batch, labels);

            ForwardTrace trace;
            const Tensor logits = run_forward(graph, weights, batch, Mode::Train, &trace);
            const LossResult loss = softmax_crossentropy(logits, labels);
            if (!std::isfinite(loss.loss))
                throw Error("non_finite", "training loss diverged at step " + std::to_string(step));
            epoch_loss += loss.loss;
            const WeightStore grads = run_backward(graph, weights, trace, loss.grad_logits);

            const double lr = cosine_lr(schedule.lr_init, step, total_steps);
            for (const auto& [id, params] : grads.nodes) {
                const LayerKind& kind = graph.node(id).kind;
                for (const auto& [name, g] : params) {
                    Tensor& w = weights.param(id, name);
                    const double wd =
                        detail::decays(kind, name) ? schedule.weight_decay : 0.0;
                    for (std::size_t k = 0; k < w.numel(); ++k)
                        w[k] -= lr * (g[k] + wd * w[k]);
                }
            }
            training_steps_total().fetch_add(1, std::memory_order_relaxed);
        }
        history.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    }
    return history;
}

/// Misclassification rate over a full pass in infer mode (argmax of logits,
/// lowest index on ties). Weights are untouched.
inline double evaluate_error(const ArchGraph& graph, const WeightStore& weights,
                             const Dataset& data, int label_groups = 0) {
    if (data.size() == 0) throw Error("empty_data", "validation set is empty");
    WeightStore scratch = weights;  // infer mode never mutates, but keep the contract explicit
    std::vector<int> order(data.size());
    for (int i = 0; i < data.size(); ++i) order[i] = i;
    const int batch_size = 128;
    Tensor batch;
    std::vector<int> labels;
    int wrong = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, order.size());
        detail::gather_batch(data, order, begin, end, batch, labels);
        const Tensor logits = run_forward(graph, scratch, batch, Mode::Infer);
        for (int b = 0; b < logits.dim(0); ++b) {
            int best = 0;
            for (int k = 1; k < logits.dim(1); ++k)
                if (logits.at2(b, k) > logits.at2(b, best)) best = k;
            int predicted = best, truth = labels[b];
            if (label_groups > 0) {
                predicted = coarse_label(predicted, data.num_classes, label_groups);
                truth = coarse_label(truth, data.num_classes, label_groups);
            }
            wrong += predicted != truth;
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Cheap objectives
// ---------------------------------------------------------------------------

struct LatencyConfig {
    int batch_size = 32;
    int reps = 200;
    int warmup = 20;
    std::uint64_t seed = 1;
    bool operator==(const LatencyConfig&) const = default;
};

struct LatencyResult {
    double seconds = 0.0;
    LatencyConfig config;  // reported alongside so numbers are never compared across configs
};

/// Mean wall-clock seconds of an infer-mode forward pass. Serialized on a
/// process-wide lock so concurrent evaluations do not co-measure.
inline LatencyResult measure_latency(const ArchGraph& graph, const WeightStore& weights,
                                     const LatencyConfig& cfg = {}) {
    if (cfg.reps < 1) throw Error("bad_config", "latency reps must be >= 1");
    static std::mutex timing_lock;
    std::lock_guard<std::mutex> guard(timing_lock);

    WeightStore scratch = weights;
    Rng rng(cfg.seed);
    Tensor batch({cfg.batch_size, graph.input_spec.channels, graph.input_spec.height,
                  graph.input_spec.width});
    for (auto& v : batch.vec()) v = rng.uniform();

    for (int i = 0; i < cfg.warmup; ++i) run_forward(graph, scratch, batch, Mode::Infer);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < cfg.reps; ++i) run_forward(graph, scratch, batch, Mode::Infer);
    const auto stop = std::chrono::steady_clock::now();
    const double total = std::chrono::duration<double>(stop - start).count();
    return {total / cfg.reps, cfg};
}

struct CheapConfig {
    bool log_params = true;
    bool log_macs = true;
    bool latency = false;
    LatencyConfig latency_cfg;
    bool operator==(const CheapConfig&) const = default;

    std::vector<std::string> names() const {
        std::vector<std::string> n;
        if (log_params) n.push_back("log10_params");
        if (log_macs) n.push_back("log10_macs");
        if (latency) n.push_back("latency_s");
        return n;
    }
};

/// Cheap objective components. Requires no training; touches weights only
/// when the latency probe is enabled.
inline std::vector<double> compute_cheap(const ArchGraph& graph, const CheapConfig& cfg,
                                         const WeightStore* weights = nullptr) {
    std::vector<double> values;
    if (cfg.log_params) values.push_back(std::log10(static_cast<double>(count_params(graph))));
    if (cfg.log_macs) values.push_back(std::log10(static_cast<double>(count_macs(graph))));
    if (cfg.latency) {
        if (!weights) throw Error("bad_config", "latency objective needs weights");
        values.push_back(measure_latency(graph, *weights, cfg.latency_cfg).seconds);
    }
    return values;
}

// ---------------------------------------------------------------------------
// Full objective vector
// ---------------------------------------------------------------------------

struct EvalContext {
    const Dataset* train = nullptr;
    const Dataset* val = nullptr;
    TrainSchedule schedule;
    CheapConfig cheap;
    int expensive_tasks = 1;  // 2 adds a coarse-label error over the same inputs
    bool lamarckian = true;   // false: reinitialize from scratch before training
};

inline std::vector<std::string> objective_names(const EvalContext& ctx) {
    std::vector<std::string> names{"val_error"};
    if (ctx.expensive_tasks >= 2) names.push_back("val_error_coarse");
    for (const auto& n : ctx.cheap.names()) names.push_back(n);
    return names;
}

/// Train (from inherited weights unless the Lamarckism ablation is active)
/// and evaluate the full objective vector. Deterministic given member_seed.
inline ObjectiveVector compute_objectives(const ArchGraph& graph, WeightStore& weights,
                                          const EvalContext& ctx, std::uint64_t member_seed) {
    if (!ctx.train || !ctx.val) throw Error("bad_config", "evaluation context needs datasets");
    if (!ctx.lamarckian) {
        Rng rng(derive_seed(member_seed, 0xf2e5));
        weights = init_weights(graph, rng);
    }
    TrainSchedule schedule = ctx.schedule;
    schedule.seed = derive_seed(member_seed, 0x72a1);
    if (schedule.epochs > 0) train_network(graph, weights, *ctx.train, schedule);

    ObjectiveVector result;
    result.names = objective_names(ctx);
    result.expensive.push_back(evaluate_error(graph, weights, *ctx.val));
    if (ctx.expensive_tasks >= 2)
        result.expensive.push_back(
            evaluate_error(graph, weights, *ctx.val, std::max(2, ctx.val->num_classes / 2)));
    result.cheap = compute_cheap(graph, ctx.cheap, &weights);
    return result;
}

}  // namespace monas
