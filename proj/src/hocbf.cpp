#include "safeode/hocbf.hpp"

#include <cmath>
#include <stdexcept>

namespace safeode::hocbf {

namespace {

using dynamics::AugT;

template <class T>
AugT<T> promote(const AugmentedState& a) {
    return {T(a.s.x), T(a.s.y), T(a.s.theta), T(a.s.v), T(a.u.u1), T(a.u.u2)};
}

}  // namespace

double barrier(const VehicleState& s, const ObstacleDisk& o) {
    return barrier_t(s.x, s.y, o);
}

std::vector<double> psi_chain(const AugmentedState& a, const BarrierStack& st,
                              double wheelbase) {
    dynamics::check_steering(a.u.u1);
    AugT<double> ad = promote<double>(a);
    std::array<double, 2> g{st.gains[0], st.gains[1]};
    std::vector<double> out;
    out.push_back(psi_eval<0>(ad, g, st.obstacle, st.drift_vx, wheelbase));
    if (st.m >= 1)
        out.push_back(psi_eval<1>(ad, g, st.obstacle, st.drift_vx, wheelbase));
    if (st.m >= 2)
        out.push_back(psi_eval<2>(ad, g, st.obstacle, st.drift_vx, wheelbase));
    if (st.m > 2) throw std::invalid_argument("relative degree above 2 not built");
    return out;
}

double motivating_psi2(const VehicleState& s, const ControlPair& u,
                       const ObstacleDisk& obs, double wheelbase) {
    dynamics::check_steering(u.u1);
    double dx = s.x - obs.cx;
    double dy = s.y - (obs.cy - obs.y_off);
    double c = std::cos(s.theta), sn = std::sin(s.theta);
    double b = dx * dx + dy * dy - obs.r * obs.r;
    double bdot = 2 * dx * s.v * c + 2 * dy * s.v * sn;
    double steer_term =
        (-2 * dx * sn + 2 * dy * c) * (s.v * s.v / wheelbase) * std::tan(u.u1);
    double accel_term = (2 * dx * c + 2 * dy * sn) * u.u2;
    return steer_term + accel_term + 2 * s.v * s.v + 2 * bdot + b;
}

LinearRow lifted_constraint(const AugmentedState& a, const BarrierStack& st,
                            double wheelbase) {
    dynamics::check_steering(a.u.u1);
    using D6 = Dual<double, 6>;
    AugT<D6> ad = promote<D6>(a);
    ad.x.d[0] = 1.0;
    ad.y.d[1] = 1.0;
    ad.theta.d[2] = 1.0;
    ad.v.d[3] = 1.0;
    ad.u1.d[4] = 1.0;
    ad.u2.d[5] = 1.0;
    std::array<D6, 2> g{D6(st.gains[0]), D6(st.gains[1])};
    D6 psi_m;
    if (st.m == 1)
        psi_m = psi_eval<1>(ad, g, st.obstacle, st.drift_vx, wheelbase);
    else if (st.m == 2)
        psi_m = psi_eval<2>(ad, g, st.obstacle, st.drift_vx, wheelbase);
    else
        throw std::invalid_argument("relative degree above 2 not built");

    auto h = dynamics::bicycle_flow_t(promote<double>(a), wheelbase);
    h[0] -= st.drift_vx;
    LinearRow row;
    row.a = {psi_m.d[4], psi_m.d[5]};
    row.c = psi_m.d[0] * h[0] + psi_m.d[1] * h[1] + psi_m.d[2] * h[2] +
            psi_m.d[3] * h[3] + st.theta_p * st.gains[2] * psi_m.v;
    if (!std::isfinite(row.a[0]) || !std::isfinite(row.a[1]) ||
        !std::isfinite(row.c))
        throw std::runtime_error("non-finite safety row");
    return row;
}

std::pair<LinearRow, RowJacobian> lifted_constraint_grad(
    const AugmentedState& a, const BarrierStack& st, double wheelbase) {
    if (st.m != 2)
        throw std::invalid_argument("row Jacobian is built for m = 2 only");
    dynamics::check_steering(a.u.u1);
    using D8 = Dual<double, 8>;
    using DD = Dual<D8, 8>;

    // Hyper-dual seeding: slot k carries d/dk in both the inner and outer
    // tangents, so F.v.d[j] is the gradient and F.d[k].d[j] the Hessian.
    const double vals[8] = {a.s.x, a.s.y,  a.s.theta,   a.s.v,
                            a.u.u1, a.u.u2, st.gains[0], st.gains[1]};
    DD in[8];
    for (int k = 0; k < 8; ++k) {
        in[k].v = D8::seeded(vals[k], k);
        in[k].d[k] = D8(1.0);
    }
    AugT<DD> ad{in[0], in[1], in[2], in[3], in[4], in[5]};
    std::array<DD, 2> g{in[6], in[7]};
    DD P = psi_eval<2>(ad, g, st.obstacle, st.drift_vx, wheelbase);

    double psi = P.v.v;
    std::array<double, 8> grad;
    for (int j = 0; j < 8; ++j) grad[j] = P.v.d[j];
    double H[8][8] = {};
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 8; ++j) H[k][j] = P.d[k].d[j];

    // Relative-frame flow and its partials in the same slot order.
    AugT<D8> ad1{D8::seeded(vals[0], 0), D8::seeded(vals[1], 1),
                 D8::seeded(vals[2], 2), D8::seeded(vals[3], 3),
                 D8::seeded(vals[4], 4), D8::seeded(vals[5], 5)};
    auto hfull = dynamics::bicycle_flow_t(ad1, wheelbase);
    double h[4], dh[4][8];
    for (int i = 0; i < 4; ++i) {
        h[i] = hfull[i].v;
        for (int k = 0; k < 8; ++k) dh[i][k] = hfull[i].d[k];
    }
    h[0] -= st.drift_vx;

    LinearRow row;
    row.a = {grad[4], grad[5]};
    row.c = grad[0] * h[0] + grad[1] * h[1] + grad[2] * h[2] + grad[3] * h[3] +
            st.theta_p * st.gains[2] * psi;

    RowJacobian jac;
    for (int k = 0; k < 8; ++k) {
        jac.da[0][k] = H[k][4];
        jac.da[1][k] = H[k][5];
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += H[k][i] * h[i] + grad[i] * dh[i][k];
        jac.dc[k] = s + st.theta_p * st.gains[2] * grad[k];
    }
    jac.dc_dp3 = st.theta_p * psi;
    jac.dc_dthetap = st.gains[2] * psi;
    return {row, jac};
}

std::array<LinearRow, 4> bound_rows(const ControlPair& u,
                                    const ControlBounds& bounds,
                                    double kappa) {
    return {LinearRow{{1.0, 0.0}, kappa * (u.u1 - bounds.u_min.u1)},
            LinearRow{{0.0, 1.0}, kappa * (u.u2 - bounds.u_min.u2)},
            LinearRow{{-1.0, 0.0}, kappa * (bounds.u_max.u1 - u.u1)},
            LinearRow{{0.0, -1.0}, kappa * (bounds.u_max.u2 - u.u2)}};
}

}  // namespace safeode::hocbf
