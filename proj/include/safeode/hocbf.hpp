#pragma once

// High-order barrier machinery for the disk-avoidance constraint.
//
// psi_0 = b, psi_i = d/dt psi_{i-1} + p_i * psi_{i-1}. For the bicycle the
// constraint has relative degree m = 2; lifting once more in the control
// rate gives a row a . udot + c >= 0 that is linear in udot and therefore a
// valid QP constraint. Time derivatives are taken by seeding dual-number
// tangents with the (relative-frame) flow, so one expression serves values,
// rows, and row Jacobians.

#include <array>
#include <utility>
#include <vector>

#include "safeode/dynamics.hpp"
#include "safeode/types.hpp"

namespace safeode::hocbf {

// Disk covering the obstacle footprint; the barrier is evaluated against the
// center shifted down by y_off: b = (x-cx)^2 + (y-(cy-y_off))^2 - r^2.
struct ObstacleDisk {
    double cx = 0.0;
    double cy = 0.0;
    double r = 1.0;
    double y_off = 0.0;
};

// Gains are (p_1 .. p_m, p_{m+1}); theta_p scales the lifted class-K term.
// drift_vx is the obstacle center's x-velocity: the whole construction is
// evaluated in the frame translating with the obstacle, which keeps the
// forward-invariance argument exact for a constant-speed preceding vehicle.
struct BarrierStack {
    ObstacleDisk obstacle;
    std::array<double, 3> gains{1.0, 1.0, 1.0};
    double theta_p = 1.0;
    int m = 2;
    double drift_vx = 0.0;
};

struct LinearRow {
    std::array<double, 2> a{0.0, 0.0};
    double c = 0.0;
};

// Derivatives of one lifted row with respect to the 8 forward inputs
// (x, y, theta, v, u1, u2, p1, p2) plus the two lift parameters. The
// coefficient vector a never depends on p3 or theta_p, exactly.
struct RowJacobian {
    std::array<std::array<double, 8>, 2> da{};
    std::array<double, 8> dc{};
    double dc_dp3 = 0.0;
    double dc_dthetap = 0.0;
};

template <class T>
T barrier_t(const T& x, const T& y, const ObstacleDisk& o) {
    T dx = x - o.cx;
    T dy = y - (o.cy - o.y_off);
    return dx * dx + dy * dy - o.r * o.r;
}

// psi_I as a scalar-generic expression. Each level lifts the augmented state
// along the relative-frame flow with udot = 0; that is exact because
// psi_{I-1} has no direct u dependence for I-1 < m, and the udot terms of
// the final level are split off separately by lifted_constraint.
template <int I, class T>
T psi_eval(const dynamics::AugT<T>& a, const std::array<T, 2>& gains,
           const ObstacleDisk& obs, double drift_vx, double wheelbase) {
    if constexpr (I == 0) {
        (void)gains;
        (void)drift_vx;
        (void)wheelbase;
        return barrier_t(a.x, a.y, obs);
    } else {
        auto lifted =
            dynamics::lift_along_flow(a, T(0), T(0), wheelbase, drift_vx);
        std::array<Dual<T, 1>, 2> g{gains[0], gains[1]};
        Dual<T, 1> prev = psi_eval<I - 1>(lifted, g, obs, drift_vx, wheelbase);
        return prev.d[0] + gains[I - 1] * prev.v;
    }
}

double barrier(const VehicleState& s, const ObstacleDisk& o);

// [psi_0, ..., psi_m] at (s, u).
std::vector<double> psi_chain(const AugmentedState& a, const BarrierStack& st,
                              double wheelbase);

// Hand-coded closed form of psi_2 with unit gains for the static centered
// disk; the independent oracle the recursion is checked against. Includes
// the 2 v^2 term of d2b/dt2 = 2(xdot^2 + ydot^2) + 2 dx xddot + 2 dy yddot,
// without which the expression cannot equal the recursion.
double motivating_psi2(const VehicleState& s, const ControlPair& u,
                       const ObstacleDisk& obs, double wheelbase);

// The QP safety row: a . udot + c = d/dt psi_m + theta_p * p_{m+1} * psi_m.
LinearRow lifted_constraint(const AugmentedState& a, const BarrierStack& st,
                            double wheelbase);

std::pair<LinearRow, RowJacobian> lifted_constraint_grad(
    const AugmentedState& a, const BarrierStack& st, double wheelbase);

// Box constraints on u expressed as rows in udot: integrating any udot
// satisfying them keeps u inside [u_min, u_max]. Order: lower u1, lower u2,
// upper u1, upper u2. kappa is the class-K gain: admissible rates scale with
// kappa * distance-to-bound, so it sets how fast the box may be approached.
std::array<LinearRow, 4> bound_rows(const ControlPair& u,
                                    const ControlBounds& bounds,
                                    double kappa = 1.0);

}  // namespace safeode::hocbf
