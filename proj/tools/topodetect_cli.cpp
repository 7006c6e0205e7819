// topodetect command line front end.
//
//   topodetect_cli build-library --state 00000 --pmus all --check-observability
//   topodetect_cli simulate --event 60:S2 --sd-kw 0.184 --out samples.csv
//   topodetect_cli detect --samples samples.csv --mode robust --tau 3
//   topodetect_cli campaign --sd-kw 0 --sd-kw 0.184 --runs 2000 --jobs 4
//   topodetect_cli place --pmus 9,28 --rounds 5
//   topodetect_cli search --k 2
//
// Every subcommand also reads its options from a TOML file given with
// --config (section named after the subcommand).
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "topodetect/topodetect.hpp"

namespace td = topodetect;

namespace {

struct Common {
    std::string feeder = TOPODETECT_DATA_DIR "/ieee33.json";
    std::string pmus = "all";
    std::string state;   // empty: the feeder's initial state
    std::string out = "-";
    std::uint64_t seed = 1;
};

struct DetectorFlags {
    std::string mode = "robust";
    std::size_t tau = 5;
    double min_proj = 0.98;
    std::string min_norm = "auto";
};

struct NoiseFlags {
    double tve = 0.0005;
};

void add_common(CLI::App* app, Common& c, bool with_state = true) {
    app->add_option("--feeder", c.feeder, "Feeder JSON file")->capture_default_str();
    app->add_option("--pmus", c.pmus, "PMU buses: comma list or 'all'")->capture_default_str();
    if (with_state) app->add_option("--state", c.state, "Switch state as a 0/1 string (default: feeder initial state)");
    app->add_option("--out", c.out, "Output file, '-' for stdout")->capture_default_str();
    app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

void add_detector(CLI::App* app, DetectorFlags& d) {
    app->add_option("--mode", d.mode, "simple | robust")->capture_default_str();
    app->add_option("--tau", d.tau, "Lag and confirmation length in samples")->capture_default_str();
    app->add_option("--min-proj", d.min_proj, "Projection threshold")->capture_default_str();
    app->add_option("--min-norm", d.min_norm, "Trend-norm gate in volts, or 'auto'")->capture_default_str();
}

std::optional<double> parse_min_norm(const std::string& text) {
    if (text == "auto") return std::nullopt;
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size() || !(v >= 0.0))
        throw td::ValidationError("--min-norm must be 'auto' or a non-negative number, got '" + text + "'");
    return v;
}

td::DetectorConfig detector_config(const DetectorFlags& d) {
    td::DetectorConfig cfg;
    cfg.mode = td::parse_mode(d.mode);
    cfg.tau = d.tau;
    cfg.min_proj = d.min_proj;
    cfg.min_norm = parse_min_norm(d.min_norm).value_or(0.0);
    cfg.validate();
    return cfg;
}

td::SwitchState state_or_initial(const td::GridModel& grid, const std::string& text) {
    if (text.empty()) return grid.initial_state();
    auto s = td::SwitchState::parse(text);
    grid.check_state(s);
    return s;
}

/// Writes to the named file, or stdout for "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (path == "-") return;
        file_.open(path);
        if (!file_) throw td::ValidationError("cannot write " + path);
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- samples CSV -----------------------------------------------------------

std::string samples_header(const td::PmuSet& pmus) {
    std::string h = "sample_index";
    for (auto b : pmus.buses()) h += ",re_" + std::to_string(b) + ",im_" + std::to_string(b);
    return h;
}

std::string samples_row(std::size_t t, const td::CVector& y) {
    std::string row = std::to_string(t);
    for (Eigen::Index k = 0; k < y.size(); ++k) row += "," + format_double(y[k].real()) + "," + format_double(y[k].imag());
    return row;
}

double parse_number(std::string_view tok, std::size_t line) {
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r')) tok.remove_suffix(1);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || end != tok.data() + tok.size())
        throw td::ValidationError("samples line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
    return v;
}

/// Reads sample_index,re,im,... rows; a first line starting with a letter is a header.
std::vector<td::CVector> read_samples(const std::string& path, std::size_t pmu_count) {
    std::ifstream in(path);
    if (!in) throw td::ValidationError("cannot open samples file " + path);
    std::vector<td::CVector> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (lineno == 1 && std::isalpha(static_cast<unsigned char>(line.front()))) continue;
        std::vector<std::string_view> cols;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            cols.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (cols.size() != 1 + 2 * pmu_count)
            throw td::ValidationError("samples line " + std::to_string(lineno) + " has " + std::to_string(cols.size()) +
                                      " columns, expected " + std::to_string(1 + 2 * pmu_count) + " for " +
                                      std::to_string(pmu_count) + " PMUs");
        parse_number(cols[0], lineno);
        td::CVector y(static_cast<Eigen::Index>(pmu_count));
        for (std::size_t k = 0; k < pmu_count; ++k)
            y[static_cast<Eigen::Index>(k)] = {parse_number(cols[1 + 2 * k], lineno), parse_number(cols[2 + 2 * k], lineno)};
        out.push_back(std::move(y));
    }
    return out;
}

// ---- subcommands -----------------------------------------------------------

struct BuildLibraryCmd {
    Common common;
    bool check = false;
    bool all_states = false;
    double threshold = 0.999;

    void attach(CLI::App& parent) {
        auto* app = parent.add_subcommand("build-library", "Signature library of one switch state");
        add_common(app, common);
        app->add_flag("--check-observability", check, "Report the largest off-diagonal projection");
        app->add_flag("--all-states", all_states, "With --check-observability: check every connected state");
        app->add_option("--threshold", threshold, "Observability threshold")->capture_default_str();
        app->final_callback([this] { run(); });
    }

    void run() const {
        const auto grid = td::load_feeder_file(common.feeder);
        const auto pmus = td::PmuSet::parse(common.pmus, grid.bus_count());
        const auto state = state_or_initial(grid, common.state);
        const auto lib = td::build_library(grid, state, pmus);
        nlohmann::json j = td::library_to_json(lib, grid);
        if (check) {
            nlohmann::json obs;
            if (all_states) {
                const auto r = td::check_observability_all_states(grid, pmus, threshold);
                obs = {{"max_offdiag", r.max_offdiag}, {"observable", r.observable},
                       {"worst_state", r.worst_state ? r.worst_state->to_string() : ""}};
            } else {
                const auto r = td::check_observability(lib, threshold);
                obs = {{"max_offdiag", r.max_offdiag}, {"observable", r.observable}};
                if (r.worst_pair) obs["worst_pair"] = {grid.switches()[r.worst_pair->first].name, grid.switches()[r.worst_pair->second].name};
            }
            std::cerr << "max off-diagonal projection: " << obs["max_offdiag"].get<double>()
                      << (obs["observable"].get<bool>() ? " (observable)" : " (not observable)") << "\n";
            j["observability"] = std::move(obs);
        }
        Output out(common.out);
        out.stream() << j.dump(2) << "\n";
    }
};

struct SimulateCmd {
    Common common;
    NoiseFlags noise;
    double sd_kw = 0.0;
    std::size_t duration = 200;
    std::vector<std::string> events;
    bool approximate = false;

    void attach(CLI::App& parent) {
        auto* app = parent.add_subcommand("simulate", "Write a measurement stream as CSV");
        add_common(app, common);
        app->add_option("--sd-kw", sd_kw, "Per-step load SD in kW")->capture_default_str();
        app->add_option("--tve", noise.tve, "PMU total vector error bound")->capture_default_str();
        app->add_option("--duration", duration, "Number of samples")->capture_default_str();
        app->add_option("--event", events, "Switch flip as SAMPLE:SWITCH (name or index); repeatable");
        app->add_flag("--approximate", approximate, "Use the linearized voltage model as ground truth");
        app->final_callback([this] { run(); });
    }

    void run() const {
        auto grid = std::make_shared<const td::GridModel>(td::load_feeder_file(common.feeder));
        td::ScenarioConfig sc;
        sc.grid = grid;
        sc.pmus = td::PmuSet::parse(common.pmus, grid->bus_count());
        sc.initial = state_or_initial(*grid, common.state);
        sc.duration = duration;
        sc.sd_kw = sd_kw;
        sc.noise.tve = noise.tve;
        sc.seed = common.seed;
        sc.approximate_world = approximate;
        for (const auto& e : events) {
            const auto colon = e.find(':');
            if (colon == std::string::npos) throw td::ValidationError("--event must be SAMPLE:SWITCH, got '" + e + "'");
            std::size_t t = 0;
            const auto [end, ec] = std::from_chars(e.data(), e.data() + colon, t);
            if (ec != std::errc{} || end != e.data() + colon) throw td::ValidationError("--event: bad sample in '" + e + "'");
            sc.events.push_back({t, grid->switch_index(e.substr(colon + 1))});
        }
        sc.validate();
        td::ScenarioSimulator sim(sc);
        Output out(common.out);
        out.stream() << samples_header(sc.pmus) << "\n";
        while (!sim.done()) {
            const std::size_t t = sim.sample_index();
            out.stream() << samples_row(t, sim.next()) << "\n";
        }
    }
};

struct DetectCmd {
    Common common;
    DetectorFlags det;
    std::string samples;
    std::size_t warmup = 100;

    void attach(CLI::App& parent) {
        auto* app = parent.add_subcommand("detect", "Replay a samples CSV through the detector; JSONL events out");
        add_common(app, common);
        add_detector(app, det);
        app->add_option("--samples", samples, "Samples CSV (sample_index, then re,im per PMU)")->required();
        app->add_option("--warmup", warmup, "Leading event-free samples used when --min-norm is auto")
            ->capture_default_str();
        app->final_callback([this] { run(); });
    }

    void run() const {
        auto grid = std::make_shared<const td::GridModel>(td::load_feeder_file(common.feeder));
        const auto pmus = td::PmuSet::parse(common.pmus, grid->bus_count());
        auto cfg = detector_config(det);
        const auto stream = read_samples(samples, pmus.size());
        if (!parse_min_norm(det.min_norm) && cfg.mode == td::DetectorMode::robust) {
            const std::vector<td::CVector> head(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(std::min(warmup, stream.size())));
            cfg.min_norm = td::calibrate_min_norm(head, cfg.tau);
        }
        td::TopologyDetector detector(grid, pmus, cfg, state_or_initial(*grid, common.state));
        Output out(common.out);
        for (std::size_t t = 0; t < stream.size(); ++t) {
            const auto o = detector.step(stream[t]);
            if (o.changed) out.stream() << td::event_json(t, o, *grid).dump() << "\n";
        }
    }
};

struct CampaignCmd {
    Common common;
    DetectorFlags det;
    NoiseFlags noise;
    std::vector<double> sd_kw{0.0, 0.184, 0.425, 0.604};
    std::size_t runs = 2000;
    std::size_t duration = 200;
    unsigned jobs = 1;
    std::string trace;
    bool approximate = false;

    void attach(CLI::App& parent) {
        auto* app = parent.add_subcommand("campaign", "Monte Carlo error statistics; one CSV row per load SD");
        add_common(app, common, false);
        add_detector(app, det);
        app->add_option("--sd-kw", sd_kw, "Load SD rows in kW; repeatable")->capture_default_str();
        app->add_option("--tve", noise.tve, "PMU total vector error bound")->capture_default_str();
        app->add_option("--runs", runs, "Runs per row")->capture_default_str();
        app->add_option("--duration", duration, "Samples per run")->capture_default_str();
        app->add_option("--jobs", jobs, "Worker threads")->capture_default_str();
        app->add_option("--trace", trace, "Per-run JSONL trace file");
        app->add_flag("--approximate", approximate, "Use the linearized voltage model as ground truth");
        app->final_callback([this] { run(); });
    }

    void run() const {
        auto grid = std::make_shared<const td::GridModel>(td::load_feeder_file(common.feeder));
        td::CampaignConfig cfg;
        cfg.grid = grid;
        cfg.pmus = td::PmuSet::parse(common.pmus, grid->bus_count());
        cfg.runs = runs;
        cfg.duration = duration;
        cfg.noise.tve = noise.tve;
        cfg.detector = detector_config(det);
        cfg.auto_min_norm = !parse_min_norm(det.min_norm);
        cfg.seed = common.seed;
        cfg.jobs = std::max(1u, jobs);
        cfg.approximate_world = approximate;
        const td::CampaignContext ctx(*grid, cfg.pmus);

        std::optional<Output> trace_out;
        if (!trace.empty()) trace_out.emplace(trace);
        Output out(common.out);
        out.stream() << td::campaign_csv_header() << "\n";
        for (double sd : sd_kw) {
            cfg.sd_kw = sd;
            const auto rep = td::run_campaign(cfg, ctx);
            out.stream() << td::campaign_csv_row(rep) << "\n";
            if (rep.aborted_runs > 0)
                std::cerr << "sd_kw " << sd << ": " << rep.aborted_runs << " runs aborted on power-flow failure\n";
            if (trace_out)
                for (const auto& r : rep.records) {
                    auto j = td::run_record_json(r, *grid);
                    j["sd_kw"] = sd;
                    trace_out->stream() << j.dump() << "\n";
                }
        }
    }
};

struct PlaceCmd {
    Common common;
    DetectorFlags det;
    NoiseFlags noise;
    std::size_t rounds = 1;
    std::size_t num_run = 200;
    std::size_t tstop = 200;
    double sd_kw = 0.184;
    unsigned jobs = 1;
    bool skip_check = false;

    void attach(CLI::App& parent) {
        auto* app = parent.add_subcommand("place", "Greedy PMU placement; one JSON line per round");
        add_common(app, common, false);
        add_detector(app, det);
        app->add_option("--rounds", rounds, "Buses to add")->capture_default_str();
        app->add_option("--num-run", num_run, "Runs per candidate")->capture_default_str();
        app->add_option("--tstop", tstop, "Samples per run")->capture_default_str();
        app->add_option("--sd-kw", sd_kw, "Load SD in kW")->capture_default_str();
        app->add_option("--tve", noise.tve, "PMU total vector error bound")->capture_default_str();
        app->add_option("--jobs", jobs, "Worker threads")->capture_default_str();
        app->add_flag("--skip-observability-check", skip_check, "Accept a seed set that is not observable");
        app->final_callback([this] { run(); });
    }

    void run() const {
        auto grid = std::make_shared<const td::GridModel>(td::load_feeder_file(common.feeder));
        td::PlacementConfig pc;
        pc.num_run = num_run;
        pc.tstop = tstop;
        pc.sd_kw = sd_kw;
        pc.noise.tve = noise.tve;
        pc.detector = detector_config(det);
        pc.auto_min_norm = !parse_min_norm(det.min_norm);
        pc.seed = common.seed;
        pc.jobs = std::max(1u, jobs);
        pc.require_observable = !skip_check;
        auto pmus = td::PmuSet::parse(common.pmus, grid->bus_count());
        Output out(common.out);
        for (std::size_t r = 0; r < rounds; ++r) {
            const auto round = td::greedy_placement(grid, pmus, pc);
            out.stream() << td::placement_round_json(round).dump() << "\n" << std::flush;
            pmus = round.after;
        }
    }
};

struct SearchCmd {
    Common common;
    std::size_t k = 2;
    double threshold = 0.999;
    std::size_t samples = 20000;
    std::size_t max_results = 0;

    void attach(CLI::App& parent) {
        auto* app = parent.add_subcommand("search", "Observable PMU sets of a given size; one JSON line per set");
        add_common(app, common, false);
        app->add_option("--k", k, "PMU count")->capture_default_str();
        app->add_option("--threshold", threshold, "Observability threshold")->capture_default_str();
        app->add_option("--samples", samples, "Random sets tried when the search is not exhaustive")->capture_default_str();
        app->add_option("--max-results", max_results, "Stop after this many sets (0: no limit)");
        app->final_callback([this] { run(); });
    }

    void run() const {
        const auto grid = td::load_feeder_file(common.feeder);
        td::SearchOptions opts;
        opts.random_samples = samples;
        opts.seed = common.seed;
        if (max_results > 0) opts.max_results = max_results;
        const auto sets = td::minimal_observable_search(grid, k, threshold, opts);
        const td::TransitionTable table(grid);
        Output out(common.out);
        for (const auto& s : sets) {
            const auto r = td::check_observability_all_states(table, s, threshold);
            out.stream() << nlohmann::json{{"pmus", s.buses()}, {"max_offdiag", r.max_offdiag}}.dump() << "\n";
        }
        std::cerr << sets.size() << " observable set(s) of size " << k << "\n";
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Switch-event detection on distribution feeders from PMU voltage phasors"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML file with option values (section per subcommand)");
    app.allow_config_extras(false);

    BuildLibraryCmd build;
    SimulateCmd simulate;
    DetectCmd detect;
    CampaignCmd campaign;
    PlaceCmd place;
    SearchCmd search;
    build.attach(app);
    simulate.attach(app);
    detect.attach(app);
    campaign.attach(app);
    place.attach(app);
    search.attach(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const td::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const td::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
