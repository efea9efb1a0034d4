#include <catch2/catch_amalgamated.hpp>

#include "../support/builders.hpp"
#include "monas/evolution.hpp"

using namespace monas;

namespace {

SearchConfig tiny_config() {
    SearchConfig cfg;
    cfg.seed = 11;
    cfg.n_gen = 2;
    cfg.n_pc = 6;
    cfg.n_ac = 2;
    cfg.workers = 2;
    cfg.schedule.epochs = 1;
    cfg.schedule.batch_size = 32;
    cfg.repair.epochs = 1;
    cfg.repair.batches = 2;
    cfg.repair.batch_size = 32;
    cfg.dataset.train_examples = 240;
    cfg.dataset.val_examples = 60;
    return cfg;
}

bool fronts_equal(const Population& a, const Population& b) {
    if (a.members.size() != b.members.size()) return false;
    for (std::size_t i = 0; i < a.members.size(); ++i) {
        if (a.members[i].id != b.members[i].id) return false;
        if (!(a.members[i].objectives == b.members[i].objectives)) return false;
        if (!(a.members[i].graph == b.members[i].graph)) return false;
        if (!(a.members[i].weights == b.members[i].weights)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("zero generations returns the evaluated initial front", "[evolution]") {
    SearchConfig cfg = tiny_config();
    cfg.n_gen = 0;
    EvolutionEngine engine(cfg);
    const SearchState st = engine.run_search();
    CHECK(st.generation == 0);
    CHECK(st.total_exp_evals == 4);
    CHECK_FALSE(st.population.members.empty());
    CHECK(st.population.members.size() <= 4);
    CHECK(st.population.mutually_non_dominated());
    for (const auto& m : st.population.members) {
        CHECK(m.objectives.expensive.size() == 1);
        CHECK(m.objectives.cheap.size() == 2);
        CHECK(validate(m.graph, cfg.constraint).empty());
    }
}

TEST_CASE("generations keep the front valid and the hypervolume monotone", "[evolution][slow]") {
    SearchConfig cfg = tiny_config();
    cfg.n_gen = 3;
    EvolutionEngine engine(cfg);
    SearchState st = engine.initial_state();
    double last_hv = st.history.back().hypervolume;
    CHECK(last_hv > 0.0);

    while (st.generation < cfg.n_gen) {
        const auto report = engine.step(st);
        CHECK(st.population.mutually_non_dominated());
        CHECK(report.hypervolume >= last_hv);
        last_hv = report.hypervolume;
        CHECK(report.exp_evals <= static_cast<std::uint64_t>(cfg.n_ac));
        CHECK(report.cheap_evals >= static_cast<std::uint64_t>(report.proposed));
        CHECK(report.proposed <= cfg.n_pc);
        for (const auto& m : st.population.members)
            CHECK(validate(m.graph, cfg.constraint).empty());
    }
    CHECK(st.total_exp_evals <= static_cast<std::uint64_t>(4 + cfg.n_gen * cfg.n_ac));
    // Children carry lineage.
    bool any_child = false;
    for (const auto& m : st.population.members)
        if (m.generation_born > 0) {
            any_child = true;
            CHECK(m.parent_id.has_value());
            CHECK_FALSE(m.operator_history.empty());
        }
    (void)any_child;
}

TEST_CASE("search is deterministic across runs and worker counts", "[evolution][slow]") {
    SearchConfig cfg = tiny_config();
    EvolutionEngine engine(cfg);
    const SearchState a = engine.run_search();
    const SearchState b = engine.run_search();
    CHECK(fronts_equal(a.population, b.population));

    SearchConfig cfg1 = cfg;
    cfg1.workers = 1;
    EvolutionEngine serial(cfg1);
    const SearchState c = serial.run_search();
    CHECK(fronts_equal(a.population, c.population));

    SearchConfig cfg2 = cfg;
    cfg2.seed = 12;
    const SearchState d = EvolutionEngine(cfg2).run_search();
    CHECK_FALSE(fronts_equal(a.population, d.population));
}

TEST_CASE("disabling approximate morphisms leaves only growing operators", "[evolution][slow]") {
    SearchConfig cfg = tiny_config();
    cfg.ablations.no_anm = true;
    EvolutionEngine engine(cfg);
    const SearchState st = engine.run_search();
    for (const auto& m : st.population.members)
        for (const auto& op : m.operator_history) CHECK(is_exact_morphism(op.kind));
}

TEST_CASE("uniform-sampling ablation still runs to completion", "[evolution][slow]") {
    SearchConfig cfg = tiny_config();
    cfg.ablations.no_kde = true;
    EvolutionEngine engine(cfg);
    const SearchState st = engine.run_search();
    CHECK(st.generation == cfg.n_gen);
    CHECK(st.population.mutually_non_dominated());
}

TEST_CASE("random baseline matches the evaluation budget and is a front", "[evolution][slow]") {
    SearchConfig cfg = tiny_config();
    EvolutionEngine engine(cfg);
    const SearchState search = engine.run_search();
    const SearchState baseline = engine.run_baseline();

    CHECK(baseline.total_exp_evals == search.total_exp_evals);
    CHECK(baseline.population.mutually_non_dominated());
    CHECK_FALSE(baseline.population.members.empty());

    const SearchState again = engine.run_baseline();
    CHECK(fronts_equal(baseline.population, again.population));
}
