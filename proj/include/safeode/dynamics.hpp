#pragma once

// Kinematic bicycle model and derivative primitives along its flow.
//
// The scalar type is templated so the same flow expression serves plain
// evaluation, forward-mode tangents, and nested tangents for Hessians.

#include <array>
#include <cmath>
#include <stdexcept>

#include "safeode/dual.hpp"
#include "safeode/types.hpp"

namespace safeode::dynamics {

inline constexpr double kSteerLimit = 1.5707963267948966 - 1e-6;  // pi/2 - 1e-6

// Augmented state (x, y, theta, v, u1, u2) over an arbitrary scalar type.
template <class T>
struct AugT {
    T x, y, theta, v, u1, u2;
};

// Right-hand side of the bicycle model: (v cos th, v sin th, (v/l) tan u1, u2).
// No singularity guard here; callers validate u1 once at the double level.
template <class T>
std::array<T, 4> bicycle_flow_t(const AugT<T>& a, double wheelbase) {
    using std::cos;
    using std::sin;
    using std::tan;
    T c = cos(a.theta);
    T s = sin(a.theta);
    return {a.v * c, a.v * s, a.v * tan(a.u1) * (1.0 / wheelbase), a.u2};
}

inline void check_steering(double u1) {
    if (!(std::fabs(u1) < kSteerLimit))
        throw std::domain_error("steering angle at or beyond the tan singularity");
}

inline VehicleState bicycle_flow(const VehicleState& s, const ControlPair& u,
                                 double wheelbase) {
    if (!(wheelbase > 0.0)) throw std::domain_error("wheelbase must be positive");
    check_steering(u.u1);
    AugT<double> a{s.x, s.y, s.theta, s.v, u.u1, u.u2};
    auto f = bicycle_flow_t(a, wheelbase);
    return {f[0], f[1], f[2], f[3]};
}

// Lifts an augmented state to single-tangent duals seeded with the augmented
// flow direction (xdot = h(x,u), udot given), so evaluating any scalar f on
// the result yields f and its derivative along the flow in one pass.
template <class T>
AugT<Dual<T, 1>> lift_along_flow(const AugT<T>& a, const T& u1_dot,
                                 const T& u2_dot, double wheelbase,
                                 double drift_vx = 0.0) {
    auto h = bicycle_flow_t(a, wheelbase);
    AugT<Dual<T, 1>> r{a.x, a.y, a.theta, a.v, a.u1, a.u2};
    r.x.d[0] = h[0] - T(drift_vx);
    r.y.d[0] = h[1];
    r.theta.d[0] = h[2];
    r.v.d[0] = h[3];
    r.u1.d[0] = u1_dot;
    r.u2.d[0] = u2_dot;
    return r;
}

// d/dt f(x(t), u(t)) along xdot = h(x,u), udot as given. A nonzero drift_vx
// evaluates the derivative in a frame translating at that speed along x.
template <class F>
double directional_derivative(F&& f, const AugmentedState& a,
                              const ControlPair& u_dot, double wheelbase,
                              double drift_vx = 0.0) {
    check_steering(a.u.u1);
    AugT<double> ad{a.s.x, a.s.y, a.s.theta, a.s.v, a.u.u1, a.u.u2};
    auto lifted = lift_along_flow(ad, u_dot.u1, u_dot.u2, wheelbase, drift_vx);
    Dual<double, 1> out = f(lifted);
    if (!std::isfinite(out.v) || !std::isfinite(out.d[0]))
        throw std::runtime_error("non-finite directional derivative");
    return out.d[0];
}

// Splits d/dt f into A.udot + c with A = grad_u f and c = grad_x f . h(x,u).
template <class F>
std::pair<std::array<double, 2>, double> linearize_in_rate(
    F&& f, const AugmentedState& a, double wheelbase) {
    double c = directional_derivative(f, a, ControlPair{0.0, 0.0}, wheelbase);
    AugT<Dual<double, 2>> ad{a.s.x, a.s.y, a.s.theta, a.s.v, a.u.u1, a.u.u2};
    ad.u1.d[0] = 1.0;
    ad.u2.d[1] = 1.0;
    Dual<double, 2> out = f(ad);
    return {{out.d[0], out.d[1]}, c};
}

// One classical RK4 step of the bicycle model under piecewise-constant u.
inline VehicleState rk4_step(const VehicleState& s, const ControlPair& u,
                             double h, double wheelbase) {
    auto add = [](const VehicleState& a, const VehicleState& b, double w) {
        return VehicleState{a.x + w * b.x, a.y + w * b.y, a.theta + w * b.theta,
                            a.v + w * b.v};
    };
    VehicleState k1 = bicycle_flow(s, u, wheelbase);
    VehicleState k2 = bicycle_flow(add(s, k1, h / 2), u, wheelbase);
    VehicleState k3 = bicycle_flow(add(s, k2, h / 2), u, wheelbase);
    VehicleState k4 = bicycle_flow(add(s, k3, h), u, wheelbase);
    VehicleState r = s;
    r.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    r.y += h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
    r.theta += h / 6 * (k1.theta + 2 * k2.theta + 2 * k3.theta + k4.theta);
    r.v += h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
    return r;
}

// Vector-Jacobian products for the expert's hand-rolled optimizer.
// flow_vjp: given gbar = dL/d(flow), accumulates dL/d(state) and dL/d(u).
void flow_vjp(const VehicleState& s, const ControlPair& u, double wheelbase,
              const VehicleState& gbar, VehicleState& gs, ControlPair& gu);

// Reverse-mode through rk4_step: gout = dL/d(next state) in, returns
// dL/d(state) and adds dL/d(u) into gu.
void rk4_step_vjp(const VehicleState& s, const ControlPair& u, double h,
                  double wheelbase, const VehicleState& gout, VehicleState& gs,
                  ControlPair& gu);

}  // namespace safeode::dynamics
