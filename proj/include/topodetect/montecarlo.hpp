#pragma once

// Scenario simulation (load random walk, PMU noise, scripted switch flips)
// and Monte Carlo campaigns over randomized single-flip scenarios.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "topodetect/common.hpp"
#include "topodetect/detector.hpp"
#include "topodetect/grid_model.hpp"
#include "topodetect/parallel.hpp"
#include "topodetect/powerflow.hpp"
#include "topodetect/signatures.hpp"

namespace topodetect {

using Rng = std::mt19937_64;

/// Per-bus active power random walk at constant power factor.
struct LoadProcess {
    RVector p_kw;
    RVector q_over_p;   // fixed per bus
    double sd_kw = 0.0;

    static LoadProcess from_grid(const GridModel& grid, double sd_kw) {
        if (!(sd_kw >= 0.0)) throw ValidationError("load step SD must be non-negative");
        const auto n = static_cast<Eigen::Index>(grid.bus_count());
        LoadProcess lp{RVector::Zero(n), RVector::Zero(n), sd_kw};
        for (const auto& b : grid.buses()) {
            const auto i = static_cast<Eigen::Index>(b.id);
            lp.p_kw[i] = b.p_kw;
            lp.q_over_p[i] = b.p_kw > 0.0 ? b.q_kvar / b.p_kw : 0.0;
        }
        return lp;
    }

    RVector q_kvar() const { return p_kw.cwiseProduct(q_over_p); }

    /// Consumed power in VA.
    CVector loads_va() const {
        CVector s(p_kw.size());
        for (Eigen::Index i = 0; i < p_kw.size(); ++i) s[i] = Complex(p_kw[i], p_kw[i] * q_over_p[i]) * 1e3;
        return s;
    }
};

/// p += N(0, sd^2) on every load bus, clamped at zero; the slack stays unloaded.
inline void step_loads_inplace(LoadProcess& proc, Rng& rng) {
    if (proc.sd_kw == 0.0) return;
    std::normal_distribution<double> step(0.0, proc.sd_kw);
    for (Eigen::Index i = 1; i < proc.p_kw.size(); ++i) proc.p_kw[i] = std::max(0.0, proc.p_kw[i] + step(rng));
}

inline LoadProcess step_loads(LoadProcess proc, Rng& rng) {
    step_loads_inplace(proc, rng);
    return proc;
}

/// Circular complex Gaussian PMU error. Real and imaginary parts each have
/// SD TVE*|u|/3, so |e| stays within TVE*|u| at the 3-sigma level.
struct NoiseModel {
    double tve = 0.0005;

    double component_sd(double magnitude) const { return tve * magnitude / 3.0; }
};

/// Noise is drawn for every bus of `v` and then restricted to the PMU rows,
/// so a bus sees the same error sequence whichever PMU set is active.
inline CVector measure(const VoltageProfile& v, const PmuSet& pmus, const NoiseModel& noise, Rng& rng) {
    if (noise.tve == 0.0) return pmus.select(v.u);
    std::normal_distribution<double> unit(0.0, 1.0);
    CVector noisy = v.u;
    for (Eigen::Index k = 0; k < noisy.size(); ++k) {
        const double sd = noise.component_sd(std::abs(v.u[k]));
        const double re = unit(rng), im = unit(rng);
        noisy[k] += Complex(sd * re, sd * im);
    }
    return pmus.select(noisy);
}

/// Green matrices of every connected state, shared read-only across runs.
class GreenTable {
public:
    explicit GreenTable(const GridModel& grid) {
        for (const auto& s : connected_states(grid)) table_.emplace(s.mask(), green_matrix(grid, s));
    }

    const GreenMatrix& at(const SwitchState& s) const {
        const auto it = table_.find(s.mask());
        if (it == table_.end()) throw ValidationError("state " + s.to_string() + " is disconnected");
        return it->second;
    }

private:
    std::unordered_map<std::uint64_t, GreenMatrix> table_;
};

struct SwitchEvent {
    std::size_t sample = 0;
    std::size_t switch_index = 0;
};

struct ScenarioConfig {
    std::shared_ptr<const GridModel> grid;
    PmuSet pmus;
    SwitchState initial;
    std::vector<SwitchEvent> events;   // sorted by sample
    std::size_t duration = 200;
    double sd_kw = 0.0;
    NoiseModel noise;
    DetectorConfig detector;
    std::uint64_t seed = 0;
    bool approximate_world = false;    // linearized voltages instead of the exact solver
    bool keep_measurements = false;

    // Optional shared precomputation; built on demand when absent.
    std::shared_ptr<const GreenTable> greens;
    std::shared_ptr<const LibraryCache> libraries;

    void validate() const {
        if (!grid) throw ValidationError("scenario: grid missing");
        grid->check_state(initial);
        if (!is_connected(*grid, initial)) throw ValidationError("scenario: initial state is disconnected");
        if (pmus.size() == 0) throw ValidationError("scenario: empty PMU set");
        for (auto b : pmus.buses())
            if (b >= grid->bus_count()) throw ValidationError("scenario: PMU bus out of range");
        if (!(noise.tve >= 0.0)) throw ValidationError("scenario: tve must be non-negative");
        detector.validate();
        SwitchState s = initial;
        for (std::size_t k = 0; k < events.size(); ++k) {
            const auto& e = events[k];
            if (e.sample >= duration) throw ValidationError("scenario: event time outside the run");
            if (k > 0 && e.sample <= events[k - 1].sample) throw ValidationError("scenario: events must be strictly increasing in time");
            if (e.switch_index >= grid->switch_count()) throw ValidationError("scenario: unknown switch in event");
            s = s.flipped(e.switch_index);
            if (!is_connected(*grid, s)) throw ValidationError("scenario: event disconnects the feeder");
        }
    }
};

/// Generates the measurement stream of a scenario one sample at a time.
class ScenarioSimulator {
public:
    explicit ScenarioSimulator(const ScenarioConfig& cfg)
        : cfg_(cfg), load_rng_(stream(cfg.seed, 0)), noise_rng_(stream(cfg.seed, 1)), loads_(LoadProcess::from_grid(*cfg.grid, cfg.sd_kw)), state_(cfg.initial) {
        cfg_.validate();
        greens_ = cfg_.greens ? cfg_.greens : std::make_shared<const GreenTable>(*cfg_.grid);
    }

    bool done() const { return t_ >= cfg_.duration; }
    std::size_t sample_index() const { return t_; }
    const SwitchState& true_state() const { return state_; }

    CVector next() {
        if (done()) throw ValidationError("scenario already finished");
        if (t_ > 0) step_loads_inplace(loads_, load_rng_);
        while (next_event_ < cfg_.events.size() && cfg_.events[next_event_].sample == t_)
            state_ = state_.flipped(cfg_.events[next_event_++].switch_index);
        const GreenMatrix& g = greens_->at(state_);
        const CVector s = injection_from_loads(loads_.loads_va());
        const double un = cfg_.grid->nominal_voltage();
        VoltageProfile v = cfg_.approximate_world ? approx_voltages(g, s, un) : exact_voltages(g, s, un, last_u_);
        last_u_ = v.u;
        ++t_;
        return measure(v, cfg_.pmus, cfg_.noise, noise_rng_);
    }

private:
    static Rng stream(std::uint64_t seed, std::uint32_t id) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
        return Rng(seq);
    }

    ScenarioConfig cfg_;
    Rng load_rng_;
    Rng noise_rng_;
    LoadProcess loads_;
    SwitchState state_;
    std::shared_ptr<const GreenTable> greens_;
    std::optional<CVector> last_u_;
    std::size_t t_ = 0;
    std::size_t next_event_ = 0;
};

struct CommitRecord {
    std::size_t sample = 0;
    std::size_t switch_index = 0;
    Direction direction = Direction::close;
    double max_projection = 0.0;
    double trend_norm = 0.0;
};

/// Per-run error categories. A run can fall in more than one.
///  - non_detection: events happened but nothing was committed.
///  - wrong_detection: some commit matches no event (wrong switch, a flip
///    before any event, or a repeat after the event was already matched).
///  - decision_error: something was committed, yet the final topology
///    estimate is wrong or an event was not matched by a commit landing in
///    [event, event + 2*tau].
struct RunClassification {
    bool non_detection = false;
    bool wrong_detection = false;
    bool decision_error = false;

    int total() const { return int{non_detection} + int{wrong_detection} + int{decision_error}; }
    friend bool operator==(const RunClassification&, const RunClassification&) = default;
};

inline RunClassification classify_run(const std::vector<SwitchEvent>& events, const std::vector<CommitRecord>& commits,
                                      const SwitchState& true_final, const SwitchState& estimated_final,
                                      std::size_t tau) {
    RunClassification c;
    if (commits.empty()) {
        c.non_detection = !events.empty();
        return c;
    }
    std::vector<std::optional<std::size_t>> matched(events.size());
    for (const auto& cm : commits) {
        // The most recent event at or before the commit.
        std::optional<std::size_t> e;
        for (std::size_t k = 0; k < events.size() && events[k].sample <= cm.sample; ++k) e = k;
        if (e && !matched[*e] && events[*e].switch_index == cm.switch_index) matched[*e] = cm.sample;
        else c.wrong_detection = true;
    }
    c.decision_error = true_final != estimated_final;
    for (std::size_t k = 0; k < events.size(); ++k)
        if (!matched[k] || *matched[k] > events[k].sample + 2 * tau) c.decision_error = true;
    return c;
}

struct ScenarioResult {
    std::vector<SwitchEvent> events;
    std::vector<CommitRecord> commits;
    SwitchState true_final;
    SwitchState estimated_final;
    RunClassification classification;
    std::vector<CVector> measurements;   // only with keep_measurements
    double min_norm = 0.0;
};

inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
    ScenarioSimulator sim(cfg);
    TopologyDetector det(cfg.grid, cfg.pmus, cfg.detector, cfg.initial, cfg.libraries);
    ScenarioResult r;
    r.events = cfg.events;
    r.min_norm = cfg.detector.min_norm;
    while (!sim.done()) {
        const std::size_t t = sim.sample_index();
        CVector y = sim.next();
        const DetectionOutcome out = det.step(y);
        if (out.changed)
            r.commits.push_back({t, *out.switch_index, *out.direction, out.max_projection, out.trend_norm});
        if (cfg.keep_measurements) r.measurements.push_back(std::move(y));
    }
    r.true_final = sim.true_state();
    r.estimated_final = det.state();
    r.classification = classify_run(r.events, r.commits, r.true_final, r.estimated_final, cfg.detector.tau);
    return r;
}

/// Event-free measurement window for min_norm calibration.
inline std::vector<CVector> quiet_window(ScenarioConfig cfg, std::size_t samples) {
    cfg.events.clear();
    cfg.duration = samples;
    std::vector<CVector> out;
    out.reserve(samples);
    ScenarioSimulator sim(cfg);
    while (!sim.done()) out.push_back(sim.next());
    return out;
}

struct CampaignConfig {
    std::shared_ptr<const GridModel> grid;
    PmuSet pmus;
    std::size_t runs = 2000;
    std::size_t duration = 200;
    double sd_kw = 0.0;
    NoiseModel noise;
    DetectorConfig detector;
    bool auto_min_norm = true;              // overrides detector.min_norm
    std::size_t calibration_samples = 1000;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
    bool approximate_world = false;
};

struct RunRecord {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    SwitchState initial;
    SwitchEvent event;
    std::vector<CommitRecord> commits;
    RunClassification classification;
    bool aborted = false;
    std::string failure;
};

struct CampaignReport {
    double sd_kw = 0.0;
    std::size_t pmu_count = 0;
    std::size_t runs = 0;
    std::size_t non_detections = 0;
    std::size_t wrong_detections = 0;
    std::size_t decision_errors = 0;
    std::size_t total_errors = 0;
    double pct_errors = 0.0;
    std::size_t aborted_runs = 0;
    double min_norm = 0.0;
    std::vector<RunRecord> records;
};

namespace detail {

inline Rng run_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

} // namespace detail

/// Shared precomputation for campaigns on one grid and PMU set.
struct CampaignContext {
    std::shared_ptr<const GreenTable> greens;
    std::shared_ptr<const LibraryCache> libraries;
    std::vector<SwitchState> states;

    CampaignContext(const GridModel& grid, const PmuSet& pmus)
        : greens(std::make_shared<const GreenTable>(grid)),
          libraries(std::make_shared<const LibraryCache>(grid, pmus)), states(connected_states(grid)) {}
};

/// Samples (initial state, switch, event time) for run `index`.
inline RunRecord draw_run(const CampaignConfig& cfg, const std::vector<SwitchState>& states, std::size_t index) {
    Rng rng = detail::run_rng(cfg.seed, 1, index);
    RunRecord rec;
    rec.run = index;
    rec.initial = states[std::uniform_int_distribution<std::size_t>(0, states.size() - 1)(rng)];
    const auto flips = enumerate_adjacent_states(*cfg.grid, rec.initial);
    if (flips.empty()) throw ValidationError("campaign: a state has no admissible flips");
    rec.event.switch_index = flips[std::uniform_int_distribution<std::size_t>(0, flips.size() - 1)(rng)].switch_index;
    const std::size_t margin = std::max(cfg.duration / 10, 2 * cfg.detector.tau + 1);
    const std::size_t lo = std::max(cfg.duration / 10, cfg.detector.tau);
    if (cfg.duration <= margin || cfg.duration - margin <= lo)
        throw ValidationError("campaign: run length too short for the detector lag");
    rec.event.sample = std::uniform_int_distribution<std::size_t>(lo, cfg.duration - margin - 1)(rng);
    rec.seed = rng();
    return rec;
}

inline CampaignReport run_campaign(const CampaignConfig& cfg, const CampaignContext& ctx) {
    if (cfg.runs < 1) throw ValidationError("campaign: runs must be at least 1");
    if (!cfg.grid) throw ValidationError("campaign: grid missing");
    cfg.detector.validate();

    ScenarioConfig base;
    base.grid = cfg.grid;
    base.pmus = cfg.pmus;
    base.initial = cfg.grid->initial_state();
    base.duration = cfg.duration;
    base.sd_kw = cfg.sd_kw;
    base.noise = cfg.noise;
    base.detector = cfg.detector;
    base.approximate_world = cfg.approximate_world;
    base.greens = ctx.greens;
    base.libraries = ctx.libraries;

    CampaignReport rep;
    rep.sd_kw = cfg.sd_kw;
    rep.pmu_count = cfg.pmus.size();
    rep.runs = cfg.runs;
    if (cfg.auto_min_norm) {
        ScenarioConfig quiet = base;
        quiet.seed = detail::run_rng(cfg.seed, 2, 0)();
        base.detector.min_norm = calibrate_min_norm(quiet_window(quiet, cfg.calibration_samples), cfg.detector.tau);
    }
    rep.min_norm = base.detector.min_norm;

    rep.records.resize(cfg.runs);
    parallel_for(cfg.runs, cfg.jobs, [&](std::size_t i) {
        RunRecord rec = draw_run(cfg, ctx.states, i);
        ScenarioConfig sc = base;
        sc.initial = rec.initial;
        sc.events = {rec.event};
        sc.seed = rec.seed;
        try {
            ScenarioResult res = run_scenario(sc);
            rec.commits = std::move(res.commits);
            rec.classification = res.classification;
        } catch (const NumericalError& e) {
            rec.aborted = true;
            rec.failure = e.what();
        }
        rep.records[i] = std::move(rec);
    });

    for (const auto& r : rep.records) {
        rep.aborted_runs += r.aborted;
        rep.non_detections += r.classification.non_detection;
        rep.wrong_detections += r.classification.wrong_detection;
        rep.decision_errors += r.classification.decision_error;
    }
    rep.total_errors = rep.non_detections + rep.wrong_detections + rep.decision_errors;
    rep.pct_errors = 100.0 * static_cast<double>(rep.total_errors) / static_cast<double>(rep.runs);
    return rep;
}

inline CampaignReport run_campaign(const CampaignConfig& cfg) {
    if (!cfg.grid) throw ValidationError("campaign: grid missing");
    return run_campaign(cfg, CampaignContext(*cfg.grid, cfg.pmus));
}

inline std::string campaign_csv_header() {
    return "sd_kw,pmu_count,non_detections,wrong_detections,decision_errors,total_errors,pct_errors";
}

inline std::string campaign_csv_row(const CampaignReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.3f,%zu,%zu,%zu,%zu,%zu,%.2f", r.sd_kw, r.pmu_count, r.non_detections,
                  r.wrong_detections, r.decision_errors, r.total_errors, r.pct_errors);
    return buf;
}

inline nlohmann::json run_record_json(const RunRecord& r, const GridModel& grid) {
    nlohmann::json commits = nlohmann::json::array();
    for (const auto& c : r.commits)
        commits.push_back({{"sample_index", c.sample},
                           {"switch", grid.switches().at(c.switch_index).name},
                           {"direction", to_string(c.direction)},
                           {"max_projection", c.max_projection},
                           {"trend_norm", c.trend_norm}});
    return {{"run", r.run},
            {"seed", r.seed},
            {"initial_state", r.initial.to_string()},
            {"event", {{"sample_index", r.event.sample}, {"switch", grid.switches().at(r.event.switch_index).name}}},
            {"commits", std::move(commits)},
            {"non_detection", r.classification.non_detection},
            {"wrong_detection", r.classification.wrong_detection},
            {"decision_error", r.classification.decision_error},
            {"aborted", r.aborted}};
}

} // namespace topodetect
