#pragma once

// PMU placement: exhaustive/randomized search for observable sets of a given
// size, and greedy growth of a set by Monte Carlo error counts.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "topodetect/grid_model.hpp"
#include "topodetect/montecarlo.hpp"
#include "topodetect/signatures.hpp"

namespace topodetect {

struct CandidateScore {
    std::size_t bus = 0;
    std::size_t errors = 0;
    double pct_errors = 0.0;
};

struct PlacementRound {
    PmuSet before;
    PmuSet after;
    std::size_t chosen_bus = 0;
    std::vector<CandidateScore> per_candidate;
};

struct PlacementConfig {
    std::size_t num_run = 200;
    std::size_t tstop = 200;
    double sd_kw = 0.184;
    NoiseModel noise;
    DetectorConfig detector;
    bool auto_min_norm = true;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
    bool require_observable = true;
    double threshold = 0.999;
};

/// Adds the bus whose campaign produces the fewest total errors. Every
/// candidate is scored on the same scenario draws; ties go to the lowest bus.
inline PlacementRound greedy_placement(const std::shared_ptr<const GridModel>& grid, const PmuSet& seed_set,
                                       const PlacementConfig& cfg) {
    if (!grid) throw ValidationError("placement: grid missing");
    if (seed_set.size() >= grid->bus_count()) throw ValidationError("placement: no candidate buses remain");
    if (cfg.require_observable && !check_observability_all_states(*grid, seed_set, cfg.threshold).observable)
        throw ValidationError("placement: seed PMU set " + seed_set.to_string() + " is not observable");

    PlacementRound round;
    round.before = seed_set;
    std::size_t best_errors = std::numeric_limits<std::size_t>::max();
    for (std::size_t bus = 0; bus < grid->bus_count(); ++bus) {
        if (seed_set.contains(bus)) continue;
        CampaignConfig cc;
        cc.grid = grid;
        cc.pmus = seed_set.with(bus, grid->bus_count());
        cc.runs = cfg.num_run;
        cc.duration = cfg.tstop;
        cc.sd_kw = cfg.sd_kw;
        cc.noise = cfg.noise;
        cc.detector = cfg.detector;
        cc.auto_min_norm = cfg.auto_min_norm;
        cc.seed = cfg.seed;
        cc.jobs = cfg.jobs;
        const CampaignReport rep = run_campaign(cc);
        round.per_candidate.push_back({bus, rep.total_errors, rep.pct_errors});
        if (rep.total_errors < best_errors) {
            best_errors = rep.total_errors;
            round.chosen_bus = bus;
        }
    }
    round.after = seed_set.with(round.chosen_bus, grid->bus_count());
    return round;
}

inline nlohmann::json placement_round_json(const PlacementRound& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& c : r.per_candidate) per.push_back({{"bus", c.bus}, {"errors", c.errors}});
    return {{"chosen_bus", r.chosen_bus}, {"pmus", r.after.buses()}, {"per_candidate", std::move(per)}};
}

struct SearchOptions {
    std::size_t random_samples = 20000;   // distinct sets tried when not exhaustive
    std::uint64_t seed = 1;
    std::size_t max_results = std::numeric_limits<std::size_t>::max();
};

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
    double c = 1.0;
    for (std::size_t i = 0; i < k; ++i) c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    return c;
}

} // namespace detail

/// PMU sets of size k that pass the all-states observability check.
/// Exhaustive for k <= 3 (or when few combinations exist), sampled otherwise.
inline std::vector<PmuSet> minimal_observable_search(const GridModel& grid, std::size_t k, double threshold = 0.999,
                                                     const SearchOptions& opts = {}) {
    if (k < 1) throw ValidationError("search: k must be at least 1");
    const std::size_t n = grid.bus_count();
    std::vector<PmuSet> out;
    if (k > n) return out;
    const TransitionTable table(grid);
    auto consider = [&](const std::vector<std::size_t>& buses) {
        PmuSet set(buses, n);
        if (check_observability_all_states(table, set, threshold).observable) out.push_back(std::move(set));
        return out.size() < opts.max_results;
    };

    if (k <= 3 || detail::binomial(n, k) <= detail::binomial(33, 3)) {
        std::vector<std::size_t> idx(k);
        for (std::size_t i = 0; i < k; ++i) idx[i] = i;
        while (true) {
            if (!consider(idx)) return out;
            std::size_t i = k;
            while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
            if (i == 0) break;
            ++idx[i - 1];
            for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
        }
        return out;
    }

    Rng rng(opts.seed);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    std::set<std::vector<std::size_t>> tried;
    for (std::size_t attempt = 0; attempt < opts.random_samples; ++attempt) {
        std::vector<std::size_t> pick;
        std::sample(all.begin(), all.end(), std::back_inserter(pick), static_cast<std::ptrdiff_t>(k), rng);
        if (!tried.insert(pick).second) continue;
        if (!consider(pick)) break;
    }
    std::sort(out.begin(), out.end(), [](const PmuSet& a, const PmuSet& b) { return a.buses() < b.buses(); });
    return out;
}

} // namespace topodetect
