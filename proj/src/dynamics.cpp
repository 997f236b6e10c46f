#include "safeode/dynamics.hpp"

namespace safeode::dynamics {

void flow_vjp(const VehicleState& s, const ControlPair& u, double wheelbase,
              const VehicleState& gbar, VehicleState& gs, ControlPair& gu) {
    double c = std::cos(s.theta), sn = std::sin(s.theta);
    double tn = std::tan(u.u1);
    gs.theta += -gbar.x * s.v * sn + gbar.y * s.v * c;
    gs.v += gbar.x * c + gbar.y * sn + gbar.theta * tn / wheelbase;
    gu.u1 += gbar.theta * s.v / wheelbase * (1.0 + tn * tn);
    gu.u2 += gbar.v;
}

namespace {
VehicleState axpy(const VehicleState& a, const VehicleState& b, double w) {
    return {a.x + w * b.x, a.y + w * b.y, a.theta + w * b.theta, a.v + w * b.v};
}
void acc(VehicleState& a, const VehicleState& b, double w) {
    a.x += w * b.x;
    a.y += w * b.y;
    a.theta += w * b.theta;
    a.v += w * b.v;
}
}  // namespace

void rk4_step_vjp(const VehicleState& s, const ControlPair& u, double h,
                  double wheelbase, const VehicleState& gout, VehicleState& gs,
                  ControlPair& gu) {
    VehicleState k1 = bicycle_flow(s, u, wheelbase);
    VehicleState s1 = axpy(s, k1, h / 2);
    VehicleState k2 = bicycle_flow(s1, u, wheelbase);
    VehicleState s2 = axpy(s, k2, h / 2);
    VehicleState k3 = bicycle_flow(s2, u, wheelbase);
    VehicleState s3 = axpy(s, k3, h);
    VehicleState k4 = bicycle_flow(s3, u, wheelbase);
    (void)k4;

    VehicleState gk1{}, gk2{}, gk3{}, gk4{};
    acc(gk1, gout, h / 6);
    acc(gk2, gout, h / 3);
    acc(gk3, gout, h / 3);
    acc(gk4, gout, h / 6);
    acc(gs, gout, 1.0);

    VehicleState g3{};
    flow_vjp(s3, u, wheelbase, gk4, g3, gu);
    acc(gs, g3, 1.0);
    acc(gk3, g3, h);

    VehicleState g2{};
    flow_vjp(s2, u, wheelbase, gk3, g2, gu);
    acc(gs, g2, 1.0);
    acc(gk2, g2, h / 2);

    VehicleState g1{};
    flow_vjp(s1, u, wheelbase, gk2, g1, gu);
    acc(gs, g1, 1.0);
    acc(gk1, g1, h / 2);

    flow_vjp(s, u, wheelbase, gk1, gs, gu);
}

}  // namespace safeode::dynamics
