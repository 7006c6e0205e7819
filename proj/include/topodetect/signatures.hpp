#pragma once

// Transition signatures: the unit vector that a single switch flip imprints
// on the PMU-visible voltages, plus projection and observability checks.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "topodetect/common.hpp"
#include "topodetect/grid_model.hpp"
#include "topodetect/powerflow.hpp"

namespace topodetect {

/// Ordered set of PMU-equipped buses.
class PmuSet {
public:
    PmuSet() = default;
    PmuSet(std::vector<std::size_t> buses, std::size_t bus_count) : buses_(std::move(buses)) {
        if (buses_.empty()) throw ValidationError("PMU set must contain at least one bus");
        std::vector<bool> seen(bus_count, false);
        for (auto b : buses_) {
            if (b >= bus_count) throw ValidationError("PMU bus " + std::to_string(b) + " out of range");
            if (seen[b]) throw ValidationError("PMU bus " + std::to_string(b) + " listed twice");
            seen[b] = true;
        }
    }

    static PmuSet all(std::size_t bus_count) {
        std::vector<std::size_t> b(bus_count);
        for (std::size_t i = 0; i < bus_count; ++i) b[i] = i;
        return PmuSet(std::move(b), bus_count);
    }

    /// "all" or a comma-separated list of bus indices.
    static PmuSet parse(const std::string& text, std::size_t bus_count) {
        if (text == "all") return all(bus_count);
        std::vector<std::size_t> buses;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = text.find(',', pos);
            const std::string tok = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            if (tok.empty() || tok.find_first_not_of("0123456789 ") != std::string::npos)
                throw ValidationError("bad PMU list '" + text + "'");
            buses.push_back(std::stoul(tok));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        return PmuSet(std::move(buses), bus_count);
    }

    std::size_t size() const { return buses_.size(); }
    const std::vector<std::size_t>& buses() const { return buses_; }
    bool contains(std::size_t bus) const { return std::find(buses_.begin(), buses_.end(), bus) != buses_.end(); }

    PmuSet with(std::size_t bus, std::size_t bus_count) const {
        auto b = buses_;
        b.push_back(bus);
        return PmuSet(std::move(b), bus_count);
    }

    /// Rows of `v` at the PMU buses (the I_P selection).
    template <typename Vec>
    CVector select(const Vec& v) const {
        CVector out(static_cast<Eigen::Index>(buses_.size()));
        for (std::size_t k = 0; k < buses_.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(buses_[k])];
        return out;
    }

    CMatrix select_rows(const CMatrix& m) const {
        CMatrix out(static_cast<Eigen::Index>(buses_.size()), m.cols());
        for (std::size_t k = 0; k < buses_.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(buses_[k]));
        return out;
    }

    std::string to_string() const {
        std::string s;
        for (std::size_t k = 0; k < buses_.size(); ++k) s += (k ? "," : "") + std::to_string(buses_[k]);
        return s;
    }

private:
    std::vector<std::size_t> buses_;
};

struct Signature {
    std::size_t switch_index = 0;
    Direction direction = Direction::close;
    CVector g;   // unit norm, largest-magnitude entry real positive
};

namespace detail {

/// Scales a non-zero vector to unit length with its largest entry real positive.
inline CVector canonical_unit(const CVector& v) {
    Eigen::Index k = 0;
    v.cwiseAbs().maxCoeff(&k);
    const Complex phase = std::conj(v[k]) / std::abs(v[k]);
    CVector out = v * phase;
    out /= out.norm();
    out[k] = Complex(std::abs(out[k]), 0.0);
    return out;
}

} // namespace detail

/// Dominant left singular vector of I_P (G_after - G_before).
inline Signature transition_signature(const GreenMatrix& before, const GreenMatrix& after, const PmuSet& pmus) {
    if (before.state.distance(after.state) != 1)
        throw ValidationError("signature needs states that differ in exactly one switch");
    std::size_t l = 0;
    while (before.state.closed(l) == after.state.closed(l)) ++l;
    const CMatrix diff = pmus.select_rows(after.matrix - before.matrix);
    const double scale = std::max(before.matrix.norm(), after.matrix.norm());
    if (diff.norm() < 1e-14 * scale)
        throw DegenerateSignatureError("switch " + std::to_string(l) + " leaves no trace on the measured buses");
    Eigen::JacobiSVD<CMatrix> svd(diff, Eigen::ComputeThinU);
    return Signature{l, after.state.closed(l) ? Direction::close : Direction::open,
                     detail::canonical_unit(svd.matrixU().col(0))};
}

struct SignatureLibrary {
    SwitchState state;
    PmuSet pmus;
    std::vector<Signature> signatures;
    RMatrix gram;   // |<g_u, g_v>|

    std::size_t size() const { return signatures.size(); }

    /// Position of switch l in `signatures`, if that flip is admissible.
    std::optional<std::size_t> find(std::size_t switch_index) const {
        for (std::size_t k = 0; k < signatures.size(); ++k)
            if (signatures[k].switch_index == switch_index) return k;
        return std::nullopt;
    }
};

inline RMatrix signature_gram(const std::vector<Signature>& sigs) {
    const auto m = static_cast<Eigen::Index>(sigs.size());
    RMatrix gram = RMatrix::Identity(m, m);
    for (Eigen::Index u = 0; u < m; ++u)
        for (Eigen::Index v = u + 1; v < m; ++v)
            gram(u, v) = gram(v, u) = std::min(1.0, std::abs(sigs[static_cast<std::size_t>(u)].g.dot(sigs[static_cast<std::size_t>(v)].g)));
    return gram;
}

inline SignatureLibrary make_library(SwitchState state, PmuSet pmus, std::vector<Signature> sigs) {
    RMatrix gram = signature_gram(sigs);
    return SignatureLibrary{std::move(state), std::move(pmus), std::move(sigs), std::move(gram)};
}

/// Library for the state of `g_before`, each flip via a rank-one update.
inline SignatureLibrary build_library(const GridModel& grid, const GreenMatrix& g_before, const PmuSet& pmus) {
    std::vector<Signature> sigs;
    for (const auto& adj : enumerate_adjacent_states(grid, g_before.state))
        sigs.push_back(transition_signature(g_before, rank_one_update(grid, g_before, adj.switch_index), pmus));
    return make_library(g_before.state, pmus, std::move(sigs));
}

inline SignatureLibrary build_library(const GridModel& grid, const SwitchState& state, const PmuSet& pmus) {
    if (!is_connected(grid, state)) throw ValidationError("library requested for a disconnected state " + state.to_string());
    return build_library(grid, green_matrix(grid, state), pmus);
}

/// c = |<delta/|delta|, g>|, in [0, 1].
inline double projection_index(const CVector& delta, const Signature& sig) {
    if (delta.size() != sig.g.size()) throw ValidationError("trend vector and signature differ in length");
    const double norm = delta.norm();
    if (!(norm > 0.0)) throw ValidationError("projection of a zero trend vector");
    return std::min(1.0, std::abs(delta.dot(sig.g)) / norm);
}

/// Y = (1 + i*alpha) U diag(sigma_r) U^T for grids whose branches share one
/// X/R ratio. Validation aid only.
struct UniformRxDecomposition {
    double alpha = 0.0;
    RMatrix u;          // n x (n - 1), orthonormal columns orthogonal to 1
    RVector sigma_r;
    RVector sigma_i;    // diag(U^T Im(Y) U)

    CMatrix reconstruct() const {
        const RMatrix re = u * sigma_r.asDiagonal() * u.transpose();
        return Complex(1.0, alpha) * re.cast<Complex>();
    }

    /// U diag(sigma_r)^-1 U^T a: the eigenvector a switch on branch row `a` excites.
    RVector excited_direction(const RVector& a) const {
        return u * (u.transpose() * a).cwiseQuotient(sigma_r);
    }
};

inline UniformRxDecomposition uniform_rx_decomposition(const BusAdmittance& y) {
    const Eigen::Index n = y.matrix.rows();
    std::optional<double> alpha;
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index k = j + 1; k < n; ++k) {
            const Complex e = y.matrix(j, k);
            if (e == Complex(0.0, 0.0)) continue;
            if (e.real() == 0.0) throw ValidationError("purely reactive branch: X/R decomposition undefined");
            const double ratio = e.imag() / e.real();
            if (!alpha) alpha = ratio;
            else if (std::abs(ratio - *alpha) > 1e-9 * std::max(1.0, std::abs(*alpha)))
                throw ValidationError("branch X/R ratios are not uniform");
        }
    if (!alpha) throw ValidationError("admittance matrix has no branches");

    const RMatrix re = y.matrix.real();
    Eigen::SelfAdjointEigenSolver<RMatrix> eig(re);
    const RVector& lambda = eig.eigenvalues();
    const double cut = 1e-10 * lambda.cwiseAbs().maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < n; ++k)
        if (std::abs(lambda[k]) > cut) keep.push_back(k);
    UniformRxDecomposition d;
    d.alpha = *alpha;
    d.u.resize(n, static_cast<Eigen::Index>(keep.size()));
    d.sigma_r.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        d.u.col(static_cast<Eigen::Index>(c)) = eig.eigenvectors().col(keep[c]);
        d.sigma_r[static_cast<Eigen::Index>(c)] = lambda[keep[c]];
    }
    const RMatrix im = y.matrix.imag();
    d.sigma_i = (d.u.transpose() * im * d.u).diagonal();
    return d;
}

struct ObservabilityReport {
    bool observable = false;
    double max_offdiag = 0.0;
    std::optional<std::pair<std::size_t, std::size_t>> worst_pair;   // switch indices
};

inline ObservabilityReport check_observability(const SignatureLibrary& lib, double threshold = 0.999) {
    if (lib.signatures.empty()) throw ValidationError("observability check on an empty library");
    ObservabilityReport r;
    for (std::size_t u = 0; u < lib.size(); ++u)
        for (std::size_t v = u + 1; v < lib.size(); ++v) {
            const double c = lib.gram(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
            if (!r.worst_pair || c > r.max_offdiag) {
                r.max_offdiag = c;
                r.worst_pair = {lib.signatures[u].switch_index, lib.signatures[v].switch_index};
            }
        }
    r.observable = r.max_offdiag < threshold;
    return r;
}

struct StateObservability {
    SwitchState state;
    ObservabilityReport report;
    bool degenerate = false;   // some flip is invisible to the PMU set
};

struct AllStatesObservability {
    bool observable = true;
    double max_offdiag = 0.0;
    std::optional<SwitchState> worst_state;
    std::vector<StateObservability> per_state;
};

/// Full-grid rank-one factors for every flip of every connected state. A
/// signature for any PMU subset is the normalized restriction of the factor,
/// so repeated observability checks skip the per-subset SVD.
class TransitionTable {
public:
    struct Flip {
        std::size_t switch_index;
        Direction direction;
        CVector direction_vector;   // unit n-vector spanning G_after - G_before
        double singular_value;
        double green_scale;
    };

    explicit TransitionTable(const GridModel& grid) : bus_count_(grid.bus_count()) {
        for (auto& s : connected_states(grid)) {
            const GreenMatrix g = green_matrix(grid, s);
            std::vector<Flip> flips;
            for (const auto& adj : enumerate_adjacent_states(grid, s)) {
                const GreenMatrix after = rank_one_update(grid, g, adj.switch_index);
                const CMatrix diff = after.matrix - g.matrix;
                Eigen::JacobiSVD<CMatrix> svd(diff, Eigen::ComputeThinU);
                flips.push_back({adj.switch_index, adj.direction, svd.matrixU().col(0), svd.singularValues()[0],
                                 std::max(g.matrix.norm(), after.matrix.norm())});
            }
            states_.push_back({std::move(s), std::move(flips)});
        }
    }

    std::size_t bus_count() const { return bus_count_; }
    std::size_t state_count() const { return states_.size(); }
    const SwitchState& state(std::size_t k) const { return states_[k].first; }
    const std::vector<Flip>& flips(std::size_t k) const { return states_[k].second; }

    /// Library of state k restricted to `pmus`.
    SignatureLibrary library(std::size_t k, const PmuSet& pmus) const {
        std::vector<Signature> sigs;
        for (const auto& f : flips(k)) {
            const CVector v = pmus.select(f.direction_vector);
            if (v.norm() * f.singular_value < 1e-14 * f.green_scale)
                throw DegenerateSignatureError("switch " + std::to_string(f.switch_index) +
                                               " leaves no trace on the measured buses");
            sigs.push_back(Signature{f.switch_index, f.direction, detail::canonical_unit(v)});
        }
        return make_library(state(k), pmus, std::move(sigs));
    }

private:
    std::size_t bus_count_;
    std::vector<std::pair<SwitchState, std::vector<Flip>>> states_;
};

inline AllStatesObservability check_observability_all_states(const TransitionTable& table, const PmuSet& pmus,
                                                             double threshold = 0.999) {
    AllStatesObservability out;
    for (std::size_t k = 0; k < table.state_count(); ++k) {
        StateObservability st{table.state(k), {}, false};
        if (table.flips(k).empty()) {
            st.report.observable = true;   // nothing can change, nothing to confuse
        } else {
            try {
                st.report = check_observability(table.library(k, pmus), threshold);
            } catch (const DegenerateSignatureError&) {
                st.degenerate = true;
                st.report.observable = false;
                st.report.max_offdiag = 1.0;
            }
        }
        if (!st.report.observable) out.observable = false;
        if (!out.worst_state || st.report.max_offdiag > out.max_offdiag) {
            out.max_offdiag = st.report.max_offdiag;
            out.worst_state = st.state;
        }
        out.per_state.push_back(std::move(st));
    }
    return out;
}

inline AllStatesObservability check_observability_all_states(const GridModel& grid, const PmuSet& pmus,
                                                             double threshold = 0.999) {
    return check_observability_all_states(TransitionTable(grid), pmus, threshold);
}

inline nlohmann::json library_to_json(const SignatureLibrary& lib, const GridModel& grid) {
    nlohmann::json j;
    j["state"] = lib.state.to_string();
    j["pmus"] = lib.pmus.buses();
    auto& arr = j["signatures"] = nlohmann::json::array();
    for (const auto& s : lib.signatures) {
        nlohmann::json g = nlohmann::json::array();
        for (Eigen::Index k = 0; k < s.g.size(); ++k) g.push_back({s.g[k].real(), s.g[k].imag()});
        arr.push_back({{"switch", s.switch_index},
                       {"name", grid.switches().at(s.switch_index).name},
                       {"direction", to_string(s.direction)},
                       {"g", std::move(g)}});
    }
    return j;
}

} // namespace topodetect
