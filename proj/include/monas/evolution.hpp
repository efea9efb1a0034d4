#pragma once

// The evolutionary search loop: a population kept as the running Pareto-front
// approximation, KDE-biased two-stage sampling over the cheap objectives
// (parents by Eq.-style inverse density, children accepted the same way),
// morphism-based child generation with Lamarckian inheritance, and the
// budget-matched random-search baseline.
//
// Determinism contract: every stochastic decision draws from the coordinator
// stream in a fixed order, member training streams are derived from
// (seed, member id), and parallel evaluation merges results in child-index
// order, so runs reproduce exactly for a fixed config regardless of the
// worker count.

#include <atomic>
#include <chrono>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "monas/kde.hpp"
#include "monas/mutation.hpp"
#include "monas/pareto.hpp"

namespace monas {

struct DatasetConfig {
    std::string kind = "synthetic";  // "synthetic" | "idx"
    int classes = 4;
    int image_size = 12;
    int train_examples = 2000;
    int val_examples = 400;
    std::uint64_t seed = 99;
    std::string idx_images;
    std::string idx_labels;
    bool operator==(const DatasetConfig&) const = default;

    double val_fraction() const {
        return static_cast<double>(val_examples) /
               static_cast<double>(train_examples + val_examples);
    }
};

struct AblationFlags {
    bool no_anm = false;
    bool no_lamarck = false;
    bool no_kde = false;
    bool operator==(const AblationFlags&) const = default;
};

struct SearchConfig {
    std::uint64_t seed = 1;
    SearchSpace space = SearchSpace::WholeNet;
    int n_gen = 100;  // generations
    int n_pc = 32;    // proposed children per generation
    int n_ac = 8;     // accepted children per generation
    int workers = 2;
    AblationFlags ablations;
    TrainSchedule schedule;
    RepairConfig repair;
    SearchSpaceConstraint constraint{3, 2};
    MacroSpec macro;
    DatasetConfig dataset;
    CheapConfig cheap;
    int expensive_tasks = 1;
    std::vector<double> hv_reference;  // empty: defaults per objective
    bool operator==(const SearchConfig&) const = default;
};

struct PopulationMember {
    std::uint64_t id = 0;
    ArchGraph graph;
    WeightStore weights;
    ObjectiveVector objectives;
    std::optional<std::uint64_t> parent_id;
    int generation_born = 0;
    std::vector<AppliedOp> operator_history;
};

struct Population {
    std::vector<PopulationMember> members;

    /// The front property: no member dominates another.
    bool mutually_non_dominated() const {
        for (const auto& a : members)
            for (const auto& b : members)
                if (a.id != b.id && dominates(a.objectives, b.objectives)) return false;
        return true;
    }
};

struct GenerationReport {
    int generation = 0;
    int front_size = 0;
    int proposed = 0;
    int accepted = 0;
    int survived = 0;  // accepted children still on the front afterwards
    std::uint64_t cheap_evals = 0;
    std::uint64_t exp_evals = 0;
    double hypervolume = 0.0;
    std::vector<std::string> objective_names;
    std::vector<double> obj_min;
    std::vector<double> obj_max;
    std::vector<std::string> warnings;
};

struct EvalRecord {
    std::uint64_t member_id = 0;
    std::optional<std::uint64_t> parent_id;
    int generation = 0;
    std::vector<std::string> op_names;
    ObjectiveVector objectives;
    double wall_seconds = 0.0;
};

struct SearchState {
    Population population;
    Rng rng;
    std::uint64_t next_member_id = 0;
    int generation = 0;  // completed generations
    std::vector<GenerationReport> history;
    std::vector<EvalRecord> eval_log;  // side record, not part of resume equality
    std::uint64_t total_exp_evals = 0;
    std::uint64_t total_cheap_evals = 0;
};

namespace evo_detail {

inline std::string op_label(const AppliedOp& op) {
    std::string s = morph_name(op.kind);
    s += "@";
    for (std::size_t i = 0; i < op.sites.size(); ++i)
        s += (i ? "," : "") + std::to_string(op.sites[i]);
    return s;
}

/// Default hypervolume reference: errors bounded by 1, desk-scale nets stay
/// far below 10^9 parameters / 10^12 MACs / 10 s latency.
inline std::vector<double> default_hv_reference(const std::vector<std::string>& names) {
    std::vector<double> ref;
    for (const auto& n : names) {
        if (n == "val_error" || n == "val_error_coarse") ref.push_back(1.5);
        else if (n == "log10_params") ref.push_back(9.0);
        else if (n == "log10_macs") ref.push_back(12.0);
        else ref.push_back(10.0);
    }
    return ref;
}

}  // namespace evo_detail

class EvolutionEngine {
public:
    explicit EvolutionEngine(SearchConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.dataset.kind == "idx") {
            Dataset all = load_idx(cfg_.dataset.idx_images, cfg_.dataset.idx_labels);
            const auto parts = split(all, cfg_.dataset.val_fraction(), cfg_.dataset.seed);
            train_ = std::move(parts.train);
            val_ = std::move(parts.val);
        } else {
            Dataset all = gen_synthetic(cfg_.dataset.train_examples + cfg_.dataset.val_examples,
                                        cfg_.dataset.classes, cfg_.dataset.image_size,
                                        cfg_.dataset.seed);
            auto parts = split(all, cfg_.dataset.val_fraction(), cfg_.dataset.seed);
            train_ = std::move(parts.train);
            val_ = std::move(parts.val);
        }
        input_spec_ = {train_.images.dim(1), train_.images.dim(2), train_.images.dim(3)};
    }

    const SearchConfig& config() const { return cfg_; }
    const Dataset& train_data() const { return train_; }
    const Dataset& val_data() const { return val_; }
    InputSpec input_spec() const { return input_spec_; }

    EvalContext eval_context() const {
        EvalContext ctx;
        ctx.train = &train_;
        ctx.val = &val_;
        ctx.schedule = cfg_.schedule;
        ctx.cheap = cfg_.cheap;
        ctx.expensive_tasks = cfg_.expensive_tasks;
        ctx.lamarckian = !cfg_.ablations.no_lamarck;
        return ctx;
    }

    MutationContext mutation_context() const {
        MutationContext ctx;
        ctx.space = cfg_.space;
        ctx.enabled = cfg_.ablations.no_anm ? exact_morph_kinds() : all_morph_kinds();
        ctx.constraint = cfg_.constraint;
        ctx.repair = cfg_.repair;
        ctx.repair_data = &train_;
        ctx.repair_enabled = !cfg_.ablations.no_lamarck;
        return ctx;
    }

    std::vector<double> hv_reference(const std::vector<std::string>& names) const {
        if (!cfg_.hv_reference.empty()) {
            if (cfg_.hv_reference.size() != names.size())
                throw Error("bad_config", "hv_reference arity does not match objectives");
            return cfg_.hv_reference;
        }
        return evo_detail::default_hv_reference(names);
    }

    /// Evaluated initial population (the Pareto front of the trivial nets).
    SearchState initial_state() const {
        SearchState st;
        st.rng = Rng(derive_seed(cfg_.seed, 0xc00d));
        auto seeds = init_trivial_population(cfg_.space, cfg_.seed, input_spec_,
                                             train_.num_classes, cfg_.macro);
        std::vector<PopulationMember> members;
        for (auto& s : seeds) {
            PopulationMember m;
            m.id = st.next_member_id++;
            m.graph = std::move(s.graph);
            m.weights = std::move(s.weights);
            m.generation_born = 0;
            members.push_back(std::move(m));
        }
        evaluate_members(members, st);
        front_filter(members);
        st.population.members = std::move(members);

        GenerationReport r = report_for(st, 0);
        r.exp_evals = st.total_exp_evals;
        st.history.push_back(std::move(r));
        return st;
    }

    /// One generation: KDE fit, parent sampling, child proposal, acceptance
    /// sampling, expensive evaluation of the accepted set, front update.
    GenerationReport step(SearchState& st) const {
        const int gen = st.generation + 1;
        GenerationReport report;
        report.generation = gen;
        auto& pop = st.population.members;
        if (pop.empty()) throw Error("bad_config", "population is empty");

        std::vector<std::vector<double>> cheap_points;
        for (const auto& m : pop) cheap_points.push_back(m.objectives.cheap);
        std::optional<KdeEstimator> kde;
        std::vector<double> parent_probs;
        if (cfg_.ablations.no_kde) {
            parent_probs = uniform_probs(pop.size());
        } else {
            kde = fit_kde(cheap_points);
            std::vector<double> densities;
            for (const auto& m : pop) densities.push_back(kde->density(m.objectives.cheap));
            parent_probs = inverse_density_probs(densities);
        }

        struct Proposal {
            MutationOutcome out;
            std::uint64_t parent_id;
            std::vector<double> cheap;
        };
        MutationContext mctx = mutation_context();
        std::vector<Proposal> proposals;
        std::uint64_t cheap_evals = 0;
        int failures = 0;
        const int failure_budget = 5 * cfg_.n_pc;
        while (static_cast<int>(proposals.size()) < cfg_.n_pc && failures < failure_budget) {
            const std::size_t pi = sample_index(parent_probs, st.rng);
            try {
                MutationOutcome out = generate_child(pop[pi].graph, pop[pi].weights, mctx, st.rng);
                Proposal p{std::move(out), pop[pi].id, {}};
                p.cheap = compute_cheap(p.out.graph, cfg_.cheap, &p.out.weights);
                ++cheap_evals;
                proposals.push_back(std::move(p));
            } catch (const Error& e) {
                if (e.code() != "exhausted") throw;
                ++failures;  // resample the parent
            }
        }
        if (static_cast<int>(proposals.size()) < cfg_.n_pc)
            report.warnings.push_back("proposal shortfall: " +
                                      std::to_string(proposals.size()) + "/" +
                                      std::to_string(cfg_.n_pc));
        report.proposed = static_cast<int>(proposals.size());

        std::vector<double> accept_probs;
        if (cfg_.ablations.no_kde || !kde) {
            accept_probs = uniform_probs(proposals.size());
        } else {
            std::vector<double> densities;
            for (const auto& p : proposals) densities.push_back(kde->density(p.cheap));
            accept_probs = inverse_density_probs(densities);
        }
        const auto chosen = sample_without_replacement(
            accept_probs, static_cast<std::size_t>(cfg_.n_ac), st.rng);
        report.accepted = static_cast<int>(chosen.size());

        std::vector<PopulationMember> accepted;
        for (std::size_t idx : chosen) {
            Proposal& p = proposals[idx];
            PopulationMember m;
            m.id = st.next_member_id++;
            m.graph = std::move(p.out.graph);
            m.weights = std::move(p.out.weights);
            m.parent_id = p.parent_id;
            m.generation_born = gen;
            const auto& parent = *std::find_if(pop.begin(), pop.end(), [&](const auto& q) {
                return q.id == p.parent_id;
            });
            m.operator_history = parent.operator_history;
            for (const auto& op : p.out.ops) m.operator_history.push_back(op);
            accepted.push_back(std::move(m));
        }
        evaluate_members(accepted, st, gen);

        // Front of (old population plus accepted children).
        std::vector<PopulationMember> all = std::move(pop);
        for (auto& m : accepted) all.push_back(std::move(m));
        const std::size_t old_count = all.size() - chosen.size();
        front_filter(all);
        int survived = 0;
        for (const auto& m : all) survived += m.generation_born == gen;
        report.survived = survived;

        st.population.members = std::move(all);
        st.generation = gen;
        st.total_cheap_evals += cheap_evals;
        report.cheap_evals = cheap_evals;
        report.exp_evals = chosen.size();
        (void)old_count;

        GenerationReport shaped = report_for(st, gen);
        shaped.proposed = report.proposed;
        shaped.accepted = report.accepted;
        shaped.survived = report.survived;
        shaped.cheap_evals = report.cheap_evals;
        shaped.exp_evals = report.exp_evals;
        shaped.warnings = report.warnings;
        st.history.push_back(shaped);
        return shaped;
    }

    /// Run generations until st.generation == n_gen, invoking `on_generation`
    /// after the initial evaluation and after every step (for checkpoints).
    template <typename Callback>
    void run(SearchState& st, Callback&& on_generation) const {
        on_generation(st);
        while (st.generation < cfg_.n_gen) {
            step(st);
            on_generation(st);
        }
    }

    SearchState run_search() const {
        SearchState st = initial_state();
        run(st, [](const SearchState&) {});
        return st;
    }

    /// Random-search baseline under the identical evaluation budget: children
    /// are generated by uniform random operator sequences from uniformly
    /// chosen previously evaluated networks (no KDE, no front-based parent
    /// selection), initialized from scratch, and trained with the same
    /// schedule. Returns the Pareto front over everything evaluated.
    SearchState run_baseline() const {
        SearchState st;
        st.rng = Rng(derive_seed(cfg_.seed, 0xba5e));
        auto seeds = init_trivial_population(cfg_.space, cfg_.seed, input_spec_,
                                             train_.num_classes, cfg_.macro);
        std::vector<PopulationMember> pool;
        for (auto& s : seeds) {
            PopulationMember m;
            m.id = st.next_member_id++;
            m.graph = std::move(s.graph);
            m.weights = std::move(s.weights);
            m.generation_born = 0;
            pool.push_back(std::move(m));
        }
        evaluate_members(pool, st);

        MutationContext mctx = mutation_context();
        mctx.repair_enabled = false;  // random search inherits nothing

        for (int wave = 1; wave <= cfg_.n_gen; ++wave) {
            std::vector<PopulationMember> children;
            int failures = 0;
            while (static_cast<int>(children.size()) < cfg_.n_ac && failures < 5 * cfg_.n_ac) {
                const std::size_t pi = st.rng.uniform_int(pool.size());
                try {
                    MutationOutcome out =
                        generate_child(pool[pi].graph, pool[pi].weights, mctx, st.rng);
                    PopulationMember m;
                    m.id = st.next_member_id++;
                    m.graph = std::move(out.graph);
                    Rng wrng(derive_seed(cfg_.seed, m.id, 0xba5e1));
                    m.weights = init_weights(m.graph, wrng);  // from scratch
                    m.parent_id = pool[pi].id;
                    m.generation_born = wave;
                    for (const auto& op : out.ops) m.operator_history.push_back(op);
                    children.push_back(std::move(m));
                } catch (const Error& e) {
                    if (e.code() != "exhausted") throw;
                    ++failures;
                }
            }
            evaluate_members(children, st, wave);
            GenerationReport r;
            r.generation = wave;
            r.exp_evals = children.size();
            if (static_cast<int>(children.size()) < cfg_.n_ac)
                r.warnings.push_back("baseline shortfall: " + std::to_string(children.size()) +
                                     "/" + std::to_string(cfg_.n_ac));
            st.history.push_back(std::move(r));
            for (auto& c : children) pool.push_back(std::move(c));
        }

        front_filter(pool);
        st.population.members = std::move(pool);
        st.generation = cfg_.n_gen;
        return st;
    }

private:
    /// Evaluate members in parallel (deterministic per-member seeds, results
    /// merged in index order) and append their evaluation records.
    void evaluate_members(std::vector<PopulationMember>& members, SearchState& st,
                          int generation = 0) const {
        if (members.empty()) return;
        const EvalContext ctx = eval_context();
        std::vector<double> wall(members.size(), 0.0);
        std::vector<std::string> errors(members.size());
        std::atomic<std::size_t> next{0};
        const int workers =
            std::max(1, std::min<int>(cfg_.workers, static_cast<int>(members.size())));
        auto work = [&] {
            for (std::size_t i = next.fetch_add(1); i < members.size(); i = next.fetch_add(1)) {
                const auto start = std::chrono::steady_clock::now();
                try {
                    members[i].objectives =
                        compute_objectives(members[i].graph, members[i].weights, ctx,
                                           derive_seed(cfg_.seed, members[i].id, 0xe7a1));
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
                wall[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                              .count();
            }
        };
        if (workers == 1) {
            work();
        } else {
            std::vector<std::thread> threads;
            for (int t = 0; t < workers; ++t) threads.emplace_back(work);
            for (auto& t : threads) t.join();
        }
        for (const auto& e : errors)
            if (!e.empty()) throw Error("eval_failed", e);
        for (std::size_t i = 0; i < members.size(); ++i) {
            EvalRecord rec;
            rec.member_id = members[i].id;
            rec.parent_id = members[i].parent_id;
            rec.generation = generation;
            for (const auto& op : members[i].operator_history)
                rec.op_names.push_back(evo_detail::op_label(op));
            rec.objectives = members[i].objectives;
            rec.wall_seconds = wall[i];
            st.eval_log.push_back(std::move(rec));
        }
        st.total_exp_evals += members.size();
    }

    /// Reduce to the Pareto front, earliest member id winning duplicate ties.
    static void front_filter(std::vector<PopulationMember>& members) {
        std::vector<std::vector<double>> objs;
        std::vector<std::uint64_t> births;
        for (const auto& m : members) {
            objs.push_back(m.objectives.concat());
            births.push_back(m.id);
        }
        const auto kept = pareto_indices(objs, births);
        std::vector<PopulationMember> front;
        front.reserve(kept.size());
        for (std::size_t idx : kept) front.push_back(std::move(members[idx]));
        members = std::move(front);
    }

    GenerationReport report_for(const SearchState& st, int gen) const {
        GenerationReport r;
        r.generation = gen;
        r.front_size = static_cast<int>(st.population.members.size());
        if (!st.population.members.empty()) {
            r.objective_names = st.population.members[0].objectives.names;
            const std::size_t d = r.objective_names.size();
            r.obj_min.assign(d, std::numeric_limits<double>::infinity());
            r.obj_max.assign(d, -std::numeric_limits<double>::infinity());
            std::vector<std::vector<double>> pts;
            for (const auto& m : st.population.members) {
                const auto v = m.objectives.concat();
                pts.push_back(v);
                for (std::size_t i = 0; i < d; ++i) {
                    r.obj_min[i] = std::min(r.obj_min[i], v[i]);
                    r.obj_max[i] = std::max(r.obj_max[i], v[i]);
                }
            }
            if (d == 2 || d == 3)
                r.hypervolume = hypervolume(pts, hv_reference(r.objective_names));
        }
        return r;
    }

    SearchConfig cfg_;
    Dataset train_;
    Dataset val_;
    InputSpec input_spec_;
};

}  // namespace monas
