#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace topodetect;
using namespace topodetect::testing;

namespace {

PlacementConfig quick_config() {
    PlacementConfig pc;
    pc.num_run = 60;
    pc.tstop = 120;
    pc.detector.tau = 3;
    pc.seed = 3;
    return pc;
}

CampaignReport seed_campaign(const PmuSet& pmus, const PlacementConfig& pc) {
    CampaignConfig cc;
    cc.grid = ieee33();
    cc.pmus = pmus;
    cc.runs = pc.num_run;
    cc.duration = pc.tstop;
    cc.sd_kw = pc.sd_kw;
    cc.noise = pc.noise;
    cc.detector = pc.detector;
    cc.auto_min_norm = pc.auto_min_norm;
    cc.seed = pc.seed;
    return run_campaign(cc);
}

} // namespace

TEST(Search, SinglePmuFindsNothing) { EXPECT_TRUE(minimal_observable_search(*ieee33(), 1).empty()); }

TEST(Search, FullSetPasses) {
    const auto r = minimal_observable_search(*ieee33(), 33);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].size(), 33u);
}

TEST(Search, PairsAreObservableAndSorted) {
    const auto grid = ieee33();
    const auto r = minimal_observable_search(*grid, 2);
    ASSERT_FALSE(r.empty());
    const TransitionTable table(*grid);
    for (std::size_t k = 0; k < r.size(); ++k) {
        EXPECT_TRUE(check_observability_all_states(table, r[k]).observable);
        if (k > 0) EXPECT_LT(r[k - 1].buses(), r[k].buses());
    }
}

TEST(Search, PairSearchIsExhaustive) {
    const auto grid = ieee33();
    const TransitionTable table(*grid);
    std::size_t brute = 0;
    for (std::size_t a = 0; a < 33; ++a)
        for (std::size_t b = a + 1; b < 33; ++b) brute += check_observability_all_states(table, PmuSet({a, b}, 33)).observable;
    EXPECT_EQ(minimal_observable_search(*grid, 2).size(), brute);
}

TEST(Search, SampledSearchReturnsObservableSets) {
    const auto grid = ieee33();
    SearchOptions opts;
    opts.random_samples = 300;
    opts.seed = 4;
    const auto r = minimal_observable_search(*grid, 6, 0.999, opts);
    const TransitionTable table(*grid);
    EXPECT_FALSE(r.empty());
    for (const auto& s : r) {
        EXPECT_EQ(s.size(), 6u);
        EXPECT_TRUE(check_observability_all_states(table, s).observable);
    }
    EXPECT_EQ(r.size(), minimal_observable_search(*grid, 6, 0.999, opts).size());
}

TEST(Search, RejectsZeroSize) { EXPECT_THROW(minimal_observable_search(*ieee33(), 0), ValidationError); }

TEST(Greedy, NoCandidatesLeft) {
    EXPECT_THROW(greedy_placement(ieee33(), PmuSet::all(33), quick_config()), ValidationError);
}

TEST(Greedy, UnobservableSeedRejectedUnlessOverridden) {
    auto pc = quick_config();
    EXPECT_THROW(greedy_placement(ieee33(), PmuSet({17}, 33), pc), ValidationError);
}

TEST(Greedy, ChosenCandidateNoWorseThanSeed) {
    const auto grid = ieee33();
    const auto pc = quick_config();
    const auto seed = minimal_observable_search(*grid, 2).front();
    const auto round = greedy_placement(grid, seed, pc);
    EXPECT_EQ(round.per_candidate.size(), 31u);
    EXPECT_EQ(round.after.size(), 3u);
    EXPECT_TRUE(round.after.contains(round.chosen_bus));
    const auto base = seed_campaign(seed, pc);
    double chosen = 0;
    for (const auto& c : round.per_candidate) {
        if (c.bus == round.chosen_bus) chosen = c.pct_errors;
        EXPECT_FALSE(seed.contains(c.bus));
    }
    EXPECT_LE(chosen, base.pct_errors + 1.0);
}

TEST(Greedy, TiesGoToLowestBusAndResultIsDeterministic) {
    const auto grid = ieee33();
    const auto pc = quick_config();
    const auto seed = minimal_observable_search(*grid, 2).front();
    const auto a = greedy_placement(grid, seed, pc);
    const auto b = greedy_placement(grid, seed, pc);
    EXPECT_EQ(a.chosen_bus, b.chosen_bus);
    EXPECT_EQ(placement_round_json(a).dump(), placement_round_json(b).dump());
    std::size_t best = a.per_candidate.front().errors;
    for (const auto& c : a.per_candidate) best = std::min(best, c.errors);
    for (const auto& c : a.per_candidate)
        if (c.errors == best) {
            EXPECT_EQ(a.chosen_bus, c.bus);
            break;
        }
}

TEST(Greedy, AugmentedSetStaysObservable) {
    const auto grid = ieee33();
    const auto seed = minimal_observable_search(*grid, 2).back();
    const auto round = greedy_placement(grid, seed, quick_config());
    EXPECT_TRUE(check_observability_all_states(*grid, round.after).observable);
}

TEST(Greedy, SixToSevenCloseToFullDeployment) {
    const auto grid = ieee33();
    SearchOptions opts;
    opts.random_samples = 200;
    opts.max_results = 1;
    const auto seed = minimal_observable_search(*grid, 6, 0.999, opts).front();
    PlacementConfig pc;   // defaults: 200 runs of 200 samples at SD 0.184
    const auto round = greedy_placement(grid, seed, pc);
    ASSERT_EQ(round.after.size(), 7u);

    CampaignConfig cc;
    cc.grid = grid;
    cc.sd_kw = 0.184;
    cc.pmus = round.after;
    const double seven = run_campaign(cc).pct_errors;
    cc.pmus = PmuSet::all(33);
    const double full = run_campaign(cc).pct_errors;
    EXPECT_LE(std::abs(seven - full), 3.0) << "7-set " << round.after.to_string();
}

TEST(Greedy, RoundJsonShape) {
    PlacementRound r;
    r.before = PmuSet({1, 2}, 33);
    r.after = PmuSet({1, 2, 9}, 33);
    r.chosen_bus = 9;
    r.per_candidate = {{0, 4, 2.0}, {9, 1, 0.5}};
    const auto j = placement_round_json(r);
    EXPECT_EQ(j["chosen_bus"], 9);
    EXPECT_EQ(j["pmus"].size(), 3u);
    EXPECT_EQ(j["per_candidate"][1]["errors"], 1);
}
