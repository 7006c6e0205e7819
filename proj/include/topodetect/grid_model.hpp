#pragma once

// Feeder description as a switched graph: buses, branches, tie switches,
// and the matrices derived from a given switch configuration.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "topodetect/common.hpp"

namespace topodetect {

/// Open/closed configuration of the controllable switches; bit l set means
/// switch l is closed.
class SwitchState {
public:
    SwitchState() = default;
    explicit SwitchState(std::size_t count, bool closed = false) : bits_(count, closed) {}
    explicit SwitchState(std::vector<bool> bits) : bits_(std::move(bits)) {}

    /// Parses "01001"-style strings; character l is switch l.
    static SwitchState parse(std::string_view text) {
        std::vector<bool> bits;
        bits.reserve(text.size());
        for (char c : text) {
            if (c == '0') bits.push_back(false);
            else if (c == '1') bits.push_back(true);
            else throw ValidationError("switch state must be a string of 0/1, got '" + std::string(text) + "'");
        }
        return SwitchState(std::move(bits));
    }

    /// State whose bit l equals bit l of `mask`.
    static SwitchState from_mask(std::uint64_t mask, std::size_t count) {
        SwitchState s(count);
        for (std::size_t l = 0; l < count; ++l) s.bits_[l] = ((mask >> l) & 1u) != 0;
        return s;
    }

    std::size_t size() const { return bits_.size(); }
    bool closed(std::size_t l) const { return bits_.at(l); }
    void set(std::size_t l, bool closed) { bits_.at(l) = closed; }

    SwitchState flipped(std::size_t l) const {
        SwitchState s = *this;
        s.bits_.at(l) = !s.bits_.at(l);
        return s;
    }

    std::uint64_t mask() const {
        if (bits_.size() > 63) throw ValidationError("switch state too wide for a mask");
        std::uint64_t m = 0;
        for (std::size_t l = 0; l < bits_.size(); ++l)
            if (bits_[l]) m |= std::uint64_t{1} << l;
        return m;
    }

    std::string to_string() const {
        std::string s;
        s.reserve(bits_.size());
        for (bool b : bits_) s.push_back(b ? '1' : '0');
        return s;
    }

    /// Number of switches whose state differs.
    std::size_t distance(const SwitchState& other) const {
        if (other.size() != size()) throw ValidationError("switch state length mismatch");
        std::size_t d = 0;
        for (std::size_t l = 0; l < bits_.size(); ++l) d += bits_[l] != other.bits_[l];
        return d;
    }

    friend bool operator==(const SwitchState&, const SwitchState&) = default;

private:
    std::vector<bool> bits_;
};

enum class Direction { close, open };

inline const char* to_string(Direction d) { return d == Direction::close ? "close" : "open"; }

struct Bus {
    std::size_t id = 0;
    double p_kw = 0.0;
    double q_kvar = 0.0;
};

struct SwitchInfo {
    std::size_t id = 0;
    std::string name;
    bool initial_closed = false;
    std::size_t branch = 0;
};

struct Branch {
    std::size_t from_bus = 0;
    std::size_t to_bus = 0;
    Complex impedance;                   // ohms
    std::optional<std::size_t> switch_id;

    Complex admittance() const { return 1.0 / impedance; }
};

/// Immutable feeder. Bus 0 is the slack (substation).
class GridModel {
public:
    /// `switches[k].branch` indexes into `branches`; ids must be 0..r-1.
    GridModel(double nominal_voltage, std::vector<Bus> buses, std::vector<Branch> branches,
              std::vector<SwitchInfo> switches = {})
        : nominal_voltage_(nominal_voltage), buses_(std::move(buses)), branches_(std::move(branches)) {
        validate_and_index(switches);
    }

    std::size_t bus_count() const { return buses_.size(); }
    std::size_t branch_count() const { return branches_.size(); }
    std::size_t switch_count() const { return switches_.size(); }
    double nominal_voltage() const { return nominal_voltage_; }

    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Branch>& branches() const { return branches_; }
    const std::vector<SwitchInfo>& switches() const { return switches_; }
    const Branch& switch_branch(std::size_t l) const { return branches_.at(switches_.at(l).branch); }

    SwitchState initial_state() const {
        SwitchState s(switches_.size());
        for (const auto& sw : switches_) s.set(sw.id, sw.initial_closed);
        return s;
    }

    /// Looks a switch up by name ("S3") or by decimal index.
    std::size_t switch_index(std::string_view name) const {
        for (const auto& sw : switches_)
            if (sw.name == name) return sw.id;
        std::size_t idx = 0;
        const std::string text(name);
        if (!text.empty() && text.find_first_not_of("0123456789") == std::string::npos) {
            idx = std::stoul(text);
            if (idx < switches_.size()) return idx;
        }
        throw ValidationError("unknown switch '" + text + "'");
    }

    bool energized(const Branch& b, const SwitchState& state) const {
        return !b.switch_id || state.closed(*b.switch_id);
    }

    /// Consumed complex power per bus in VA (p + iq); zero at the slack.
    CVector base_loads() const {
        CVector s = CVector::Zero(static_cast<Eigen::Index>(buses_.size()));
        for (const auto& b : buses_) s[static_cast<Eigen::Index>(b.id)] = Complex(b.p_kw * 1e3, b.q_kvar * 1e3);
        return s;
    }

    void check_state(const SwitchState& state) const {
        if (state.size() != switches_.size())
            throw ValidationError("switch state has " + std::to_string(state.size()) + " entries, grid has " +
                                  std::to_string(switches_.size()) + " switches");
    }

private:
    void validate_and_index(const std::vector<SwitchInfo>& pending) {
        if (!(nominal_voltage_ > 0.0)) throw ValidationError("nominal voltage must be positive");
        if (buses_.size() < 2) throw ValidationError("feeder needs a slack bus and at least one load bus");
        std::vector<bool> seen(buses_.size(), false);
        for (const auto& b : buses_) {
            if (b.id >= buses_.size()) throw ValidationError("bus ids must be contiguous 0..n-1, got " + std::to_string(b.id));
            if (seen[b.id]) throw ValidationError("duplicate bus id " + std::to_string(b.id));
            seen[b.id] = true;
        }
        std::sort(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
        if (buses_[0].p_kw != 0.0 || buses_[0].q_kvar != 0.0)
            throw ValidationError("slack bus 0 cannot carry a load");
        for (const auto& b : buses_) {
            if (b.p_kw < 0.0) throw ValidationError("negative active load at bus " + std::to_string(b.id));
            if (b.p_kw == 0.0 && b.q_kvar != 0.0)
                throw ValidationError("zero power factor load at bus " + std::to_string(b.id));
        }

        std::vector<std::optional<SwitchInfo>> sw;
        for (std::size_t k = 0; k < branches_.size(); ++k) {
            const auto& br = branches_[k];
            const std::string where = "branch " + std::to_string(k);
            if (br.from_bus >= buses_.size() || br.to_bus >= buses_.size())
                throw ValidationError(where + " references a missing bus");
            if (br.from_bus == br.to_bus) throw ValidationError(where + " is a self-loop");
            if (br.impedance.real() < 0.0) throw ValidationError(where + " has negative resistance");
            if (std::abs(br.impedance) == 0.0) throw ValidationError(where + " has zero impedance");
        }
        for (const auto& info : pending) {
            if (info.branch >= branches_.size()) throw ValidationError("switch " + info.name + " references a missing branch");
            if (info.id >= sw.size()) sw.resize(info.id + 1);
            if (sw[info.id]) throw ValidationError("duplicate switch id " + std::to_string(info.id));
            sw[info.id] = info;
        }
        std::set<std::size_t> used_branches;
        for (std::size_t l = 0; l < sw.size(); ++l) {
            if (!sw[l]) throw ValidationError("switch ids must be contiguous 0..r-1; missing " + std::to_string(l));
            if (!used_branches.insert(sw[l]->branch).second)
                throw ValidationError("two switches on the same branch");
            switches_.push_back(*sw[l]);
        }
        for (auto& br : branches_) br.switch_id.reset();
        for (const auto& s : switches_) branches_[s.branch].switch_id = s.id;
    }

    double nominal_voltage_;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::vector<SwitchInfo> switches_;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                           const std::string& where) {
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw ValidationError(where + ": unknown field '" + key + "'");
    }
}

template <typename T>
T required(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(where + ": field '" + key + "' has the wrong type");
    }
}

inline std::size_t required_index(const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto& v = obj.contains(key) ? obj.at(key) : nlohmann::json();
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ValidationError(where + ": field '" + std::string(key) + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

} // namespace detail

/// Parses a feeder file (JSON; schema in docs/feeder-format.md).
inline GridModel load_feeder(std::string_view text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("feeder parse error: ") + e.what());
    }
    detail::reject_unknown(doc, {"nominal_voltage_v", "buses", "branches"}, "feeder");
    const double un = detail::required<double>(doc, "nominal_voltage_v", "feeder");
    if (!doc.contains("buses") || !doc["buses"].is_array()) throw ValidationError("feeder: 'buses' must be an array");
    if (!doc.contains("branches") || !doc["branches"].is_array())
        throw ValidationError("feeder: 'branches' must be an array");

    std::vector<Bus> buses;
    for (std::size_t k = 0; k < doc["buses"].size(); ++k) {
        const auto& b = doc["buses"][k];
        const std::string where = "buses[" + std::to_string(k) + "]";
        detail::reject_unknown(b, {"id", "p_kw", "q_kvar"}, where);
        buses.push_back(Bus{detail::required_index(b, "id", where), detail::required<double>(b, "p_kw", where),
                            detail::required<double>(b, "q_kvar", where)});
    }

    std::vector<Branch> branches;
    std::vector<SwitchInfo> switches;
    for (std::size_t k = 0; k < doc["branches"].size(); ++k) {
        const auto& b = doc["branches"][k];
        const std::string where = "branches[" + std::to_string(k) + "]";
        detail::reject_unknown(b, {"from", "to", "r_ohm", "x_ohm", "switch"}, where);
        Branch br;
        br.from_bus = detail::required_index(b, "from", where);
        br.to_bus = detail::required_index(b, "to", where);
        br.impedance = Complex(detail::required<double>(b, "r_ohm", where), detail::required<double>(b, "x_ohm", where));
        if (b.contains("switch") && !b["switch"].is_null()) {
            const auto& s = b["switch"];
            const std::string sw_where = where + ".switch";
            detail::reject_unknown(s, {"id", "name", "initial_closed"}, sw_where);
            switches.push_back(SwitchInfo{detail::required_index(s, "id", sw_where),
                                          detail::required<std::string>(s, "name", sw_where),
                                          detail::required<bool>(s, "initial_closed", sw_where), k});
        }
        branches.push_back(br);
    }
    return GridModel(un, std::move(buses), std::move(branches), std::move(switches));
}

inline GridModel load_feeder_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open feeder file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return load_feeder(ss.str());
}

/// Row a_l of the incidence matrix for one branch: +1 at from, -1 at to.
inline RVector incidence_row(const GridModel& grid, const Branch& br) {
    RVector a = RVector::Zero(static_cast<Eigen::Index>(grid.bus_count()));
    a[static_cast<Eigen::Index>(br.from_bus)] = 1.0;
    a[static_cast<Eigen::Index>(br.to_bus)] = -1.0;
    return a;
}

/// One row per energized branch, in branch order.
inline RMatrix incidence_matrix(const GridModel& grid, const SwitchState& state) {
    grid.check_state(state);
    std::vector<const Branch*> live;
    for (const auto& br : grid.branches())
        if (grid.energized(br, state)) live.push_back(&br);
    RMatrix a = RMatrix::Zero(static_cast<Eigen::Index>(live.size()), static_cast<Eigen::Index>(grid.bus_count()));
    for (std::size_t j = 0; j < live.size(); ++j) a.row(static_cast<Eigen::Index>(j)) = incidence_row(grid, *live[j]).transpose();
    return a;
}

struct BusAdmittance {
    CMatrix matrix;
    SwitchState state;
};

inline BusAdmittance admittance_matrix(const GridModel& grid, const SwitchState& state) {
    grid.check_state(state);
    const auto n = static_cast<Eigen::Index>(grid.bus_count());
    CMatrix y = CMatrix::Zero(n, n);
    for (const auto& br : grid.branches()) {
        if (!grid.energized(br, state)) continue;
        const auto j = static_cast<Eigen::Index>(br.from_bus);
        const auto k = static_cast<Eigen::Index>(br.to_bus);
        const Complex yl = br.admittance();
        y(j, k) -= yl;
        y(k, j) -= yl;
    }
    for (Eigen::Index j = 0; j < n; ++j) y(j, j) = -y.row(j).sum();
    return BusAdmittance{std::move(y), state};
}

inline bool is_connected(const GridModel& grid, const SwitchState& state) {
    grid.check_state(state);
    std::vector<std::size_t> parent(grid.bus_count());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::size_t components = grid.bus_count();
    for (const auto& br : grid.branches()) {
        if (!grid.energized(br, state)) continue;
        const auto a = find(br.from_bus), b = find(br.to_bus);
        if (a != b) {
            parent[a] = b;
            --components;
        }
    }
    return components == 1;
}

struct AdjacentState {
    std::size_t switch_index;
    Direction direction;
    SwitchState state;
};

/// Single-switch flips of `state` that keep the feeder connected, by switch index.
inline std::vector<AdjacentState> enumerate_adjacent_states(const GridModel& grid, const SwitchState& state) {
    grid.check_state(state);
    std::vector<AdjacentState> out;
    for (std::size_t l = 0; l < grid.switch_count(); ++l) {
        SwitchState next = state.flipped(l);
        if (!is_connected(grid, next)) continue;
        out.push_back({l, state.closed(l) ? Direction::open : Direction::close, std::move(next)});
    }
    return out;
}

/// Every connected configuration, enumerated in mask order.
inline std::vector<SwitchState> connected_states(const GridModel& grid) {
    const std::size_t r = grid.switch_count();
    if (r > 20) throw ValidationError("too many switches to enumerate all states");
    std::vector<SwitchState> out;
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << r); ++m) {
        auto s = SwitchState::from_mask(m, r);
        if (is_connected(grid, s)) out.push_back(std::move(s));
    }
    return out;
}

} // namespace topodetect
