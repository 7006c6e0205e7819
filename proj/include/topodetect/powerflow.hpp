#pragma once

// Green matrix (slack-grounded pseudo-inverse of the bus admittance), the
// linearized and exact voltage solutions, and rank-one topology updates.
//
// Power convention: every `injection` argument is the complex power injected
// into each bus, so a load consuming p + iq appears as -(p + iq). Use
// injection_from_loads() to convert.

#include <cmath>
#include <optional>

#include "topodetect/common.hpp"
#include "topodetect/grid_model.hpp"

namespace topodetect {

/// G with G*Y = I - 1*e0^T and G*e0 = 0, where e0 marks the slack bus.
struct GreenMatrix {
    CMatrix matrix;
    SwitchState state;
};

struct VoltageProfile {
    CVector u;   // volts; u[0] is the slack

    Complex slack() const { return u[0]; }
};

inline CVector injection_from_loads(const CVector& loads) { return -loads; }

/// Builds G by inverting the slack-reduced admittance and embedding zeros on
/// the slack row and column.
inline GreenMatrix green_matrix(const BusAdmittance& y) {
    const Eigen::Index n = y.matrix.rows();
    if (n < 2) throw ValidationError("admittance matrix needs at least two buses");
    const CMatrix reduced = y.matrix.bottomRightCorner(n - 1, n - 1);
    Eigen::FullPivLU<CMatrix> lu(reduced);
    if (!lu.isInvertible())
        throw NumericalError("reduced admittance is singular: energized graph is disconnected");
    GreenMatrix g{CMatrix::Zero(n, n), y.state};
    g.matrix.bottomRightCorner(n - 1, n - 1) = lu.inverse();
    // Symmetrize away round-off so the complex-symmetric invariant holds exactly.
    g.matrix = (0.5 * (g.matrix + g.matrix.transpose())).eval();
    return g;
}

inline GreenMatrix green_matrix(const GridModel& grid, const SwitchState& state) {
    return green_matrix(admittance_matrix(grid, state));
}

/// Sherman-Morrison update of G when a branch of admittance `branch_admittance`
/// with incidence row `incidence` is added (close) or removed (open).
inline GreenMatrix rank_one_update(const GreenMatrix& before, Complex branch_admittance, const RVector& incidence,
                                   Direction direction, SwitchState new_state) {
    if (incidence.size() != before.matrix.rows()) throw ValidationError("incidence row length mismatch");
    const Complex signed_y = direction == Direction::close ? branch_admittance : -branch_admittance;
    const CVector a = incidence.cast<Complex>();
    const CVector w = before.matrix * a;
    const Complex quad = signed_y * a.dot(w);   // a is real, so dot() == a^T w
    const Complex denom = 1.0 + quad;
    if (std::abs(denom) < 1e-9 * std::max(1.0, std::abs(quad)))
        throw NumericalError("rank-one update is singular: the flip disconnects the feeder");
    GreenMatrix after{before.matrix - (signed_y / denom) * (w * w.transpose()), std::move(new_state)};
    return after;
}

/// Flips switch `l` of `before.state` using the rank-one update.
inline GreenMatrix rank_one_update(const GridModel& grid, const GreenMatrix& before, std::size_t l) {
    const Branch& br = grid.switch_branch(l);
    const Direction dir = before.state.closed(l) ? Direction::open : Direction::close;
    return rank_one_update(before, br.admittance(), incidence_row(grid, br), dir, before.state.flipped(l));
}

/// Linearized solution u = U_N*1 + G*conj(s)/U_N.
inline VoltageProfile approx_voltages(const GreenMatrix& g, const CVector& injection, double nominal_voltage) {
    if (!(nominal_voltage > 0.0)) throw ValidationError("nominal voltage must be positive");
    if (injection.size() != g.matrix.rows()) throw ValidationError("power vector length mismatch");
    VoltageProfile v{CVector::Constant(injection.size(), Complex(nominal_voltage, 0.0))};
    v.u.noalias() += (g.matrix * injection.conjugate()) / nominal_voltage;
    v.u[0] = nominal_voltage;
    return v;
}

struct ExactSolverOptions {
    int max_iter = 100;
    double tolerance = 1e-10;   // relative to U_N, on the max update
};

/// Z-bus fixed point u <- U_N*1 + G*conj(s ./ u) for constant-power buses.
inline VoltageProfile exact_voltages(const GreenMatrix& g, const CVector& injection, double nominal_voltage,
                                     const std::optional<CVector>& initial = std::nullopt,
                                     ExactSolverOptions opts = {}) {
    if (!(nominal_voltage > 0.0)) throw ValidationError("nominal voltage must be positive");
    const Eigen::Index n = g.matrix.rows();
    if (injection.size() != n) throw ValidationError("power vector length mismatch");
    const CVector flat = CVector::Constant(n, Complex(nominal_voltage, 0.0));
    CVector u = initial && initial->size() == n ? *initial : flat;
    u[0] = nominal_voltage;
    const double tol = opts.tolerance * nominal_voltage;
    CVector next(n);
    for (int it = 0; it < opts.max_iter; ++it) {
        next.noalias() = flat + g.matrix * (injection.array() / u.array()).conjugate().matrix();
        next[0] = nominal_voltage;
        const double step = (next - u).cwiseAbs().maxCoeff();
        u.swap(next);
        if (!std::isfinite(step)) break;
        if (step < tol) return VoltageProfile{std::move(u)};
    }
    throw NumericalError("power flow did not converge: load exceeds feeder capability");
}

inline VoltageProfile exact_voltages(const BusAdmittance& y, const CVector& injection, double nominal_voltage,
                                     ExactSolverOptions opts = {}) {
    return exact_voltages(green_matrix(y), injection, nominal_voltage, std::nullopt, opts);
}

/// delta(t1, t2) = y(t1) - y(t2).
inline CVector trend_vector(const CVector& later, const CVector& earlier) {
    if (later.size() != earlier.size()) throw ValidationError("trend vector operands differ in length");
    return later - earlier;
}

} // namespace topodetect
