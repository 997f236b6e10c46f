#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safeode/dynamics.hpp"
#include "safeode/hocbf.hpp"
#include "safeode/rng.hpp"

using namespace safeode;
using dynamics::AugT;

namespace {

constexpr double kL = 2.0;

// Random state away from the steering singularity.
AugmentedState random_aug(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pos(-30.0, 30.0);
    std::uniform_real_distribution<double> ang(-1.2, 1.2);
    std::uniform_real_distribution<double> spd(0.5, 12.0);
    std::uniform_real_distribution<double> steer(-0.55, 0.55);
    std::uniform_real_distribution<double> accel(-4.0, 4.0);
    return {{pos(rng), pos(rng), ang(rng), spd(rng)},
            {steer(rng), accel(rng)}};
}

// Integrates the augmented flow (state + constant-rate controls) with RK4.
AugmentedState advance(const AugmentedState& a, const ControlPair& udot,
                       double t) {
    AugmentedState z = a;
    int n = 200;
    double h = t / n;
    for (int i = 0; i < n; ++i) {
        auto f = [&](const AugmentedState& w) {
            VehicleState d = dynamics::bicycle_flow(w.s, w.u, kL);
            return AugmentedState{d, udot};
        };
        auto add = [](const AugmentedState& p, const AugmentedState& q, double w) {
            return AugmentedState{{p.s.x + w * q.s.x, p.s.y + w * q.s.y,
                                   p.s.theta + w * q.s.theta, p.s.v + w * q.s.v},
                                  {p.u.u1 + w * q.u.u1, p.u.u2 + w * q.u.u2}};
        };
        AugmentedState k1 = f(z);
        AugmentedState k2 = f(add(z, k1, h / 2));
        AugmentedState k3 = f(add(z, k2, h / 2));
        AugmentedState k4 = f(add(z, k3, h));
        z.s.x += h / 6 * (k1.s.x + 2 * k2.s.x + 2 * k3.s.x + k4.s.x);
        z.s.y += h / 6 * (k1.s.y + 2 * k2.s.y + 2 * k3.s.y + k4.s.y);
        z.s.theta += h / 6 * (k1.s.theta + 2 * k2.s.theta + 2 * k3.s.theta + k4.s.theta);
        z.s.v += h / 6 * (k1.s.v + 2 * k2.s.v + 2 * k3.s.v + k4.s.v);
        z.u.u1 += h * udot.u1;
        z.u.u2 += h * udot.u2;
    }
    return z;
}

}  // namespace

TEST_CASE("flow values at axis-aligned states") {
    VehicleState d = dynamics::bicycle_flow({0, 0, 0, 10}, {0, 0}, kL);
    CHECK(d.x == doctest::Approx(10.0));
    CHECK(d.y == doctest::Approx(0.0));
    CHECK(d.theta == doctest::Approx(0.0));
    CHECK(d.v == doctest::Approx(0.0));

    double half_pi = std::acos(-1.0) / 2;
    d = dynamics::bicycle_flow({0, 0, half_pi, 4}, {0, 1}, kL);
    CHECK(d.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d.y == doctest::Approx(4.0));
    CHECK(d.theta == doctest::Approx(0.0));
    CHECK(d.v == doctest::Approx(1.0));
}

TEST_CASE("flow matches the derivative of the integrated trajectory") {
    AugmentedState a{{1, 2, 0.3, 5}, {0.2, -1}};
    VehicleState d = dynamics::bicycle_flow(a.s, a.u, kL);
    double eps = 1e-4;
    AugmentedState fwd = advance(a, {0, 0}, eps);
    AugmentedState bwd = advance(a, {0, 0}, -eps);
    CHECK(d.x == doctest::Approx((fwd.s.x - bwd.s.x) / (2 * eps)).epsilon(1e-6));
    CHECK(d.y == doctest::Approx((fwd.s.y - bwd.s.y) / (2 * eps)).epsilon(1e-6));
    CHECK(d.theta ==
          doctest::Approx((fwd.s.theta - bwd.s.theta) / (2 * eps)).epsilon(1e-6));
    CHECK(d.v == doctest::Approx((fwd.s.v - bwd.s.v) / (2 * eps)).epsilon(1e-6));
}

TEST_CASE("steering at the singularity is rejected") {
    double half_pi = std::acos(-1.0) / 2;
    CHECK_THROWS_AS(dynamics::bicycle_flow({0, 0, 0, 1}, {half_pi, 0}, kL),
                    std::domain_error);
    CHECK_THROWS_AS(dynamics::bicycle_flow({0, 0, 0, 1}, {-1.6, 0}, kL),
                    std::domain_error);
    CHECK_THROWS_AS(dynamics::bicycle_flow({0, 0, 0, 1}, {0.0, 0}, -1.0),
                    std::domain_error);
}

TEST_CASE("dual-number flow derivatives match central differences") {
    auto rng = make_rng(42, 3);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        AugmentedState a = random_aug(rng);
        AugT<Dual<double, 6>> ad{a.s.x, a.s.y, a.s.theta, a.s.v, a.u.u1, a.u.u2};
        ad.x.d[0] = 1;
        ad.y.d[1] = 1;
        ad.theta.d[2] = 1;
        ad.v.d[3] = 1;
        ad.u1.d[4] = 1;
        ad.u2.d[5] = 1;
        auto hd = dynamics::bicycle_flow_t(ad, kL);

        double base[6] = {a.s.x, a.s.y, a.s.theta, a.s.v, a.u.u1, a.u.u2};
        double delta = 1e-6;
        for (int k = 0; k < 6; ++k) {
            double save = base[k];
            auto eval = [&](double val) {
                base[k] = val;
                AugT<double> w{base[0], base[1], base[2], base[3], base[4], base[5]};
                auto f = dynamics::bicycle_flow_t(w, kL);
                base[k] = save;
                return f;
            };
            auto fp = eval(save + delta);
            auto fm = eval(save - delta);
            for (int i = 0; i < 4; ++i) {
                double fd = (fp[i] - fm[i]) / (2 * delta);
                double ad_val = hd[i].d[k];
                double scale = std::max({1.0, std::fabs(fd), std::fabs(ad_val)});
                CHECK(std::fabs(fd - ad_val) / scale < 1e-5);
                ++checked;
            }
        }
    }
    CHECK(checked == 1000 * 6 * 4);
}

TEST_CASE("directional derivative of coordinate functions") {
    AugmentedState a{{0, 0, 0, 10}, {0.1, 3}};
    auto f_v = [](const auto& w) { return w.v; };
    CHECK(dynamics::directional_derivative(f_v, a, {0, 0}, kL) ==
          doctest::Approx(3.0));
    auto f_x = [](const auto& w) { return w.x; };
    CHECK(dynamics::directional_derivative(f_x, a, {0, 0}, kL) ==
          doctest::Approx(10.0));
}

TEST_CASE("directional derivative of psi2 matches differencing along the flow") {
    auto rng = make_rng(7, 4);
    hocbf::ObstacleDisk obs{20.0, 1.0, 5.0, 0.0};
    for (int trial = 0; trial < 50; ++trial) {
        AugmentedState a = random_aug(rng);
        ControlPair udot{0.3, -0.8};
        auto psi2 = [&](const auto& w) {
            using T = std::decay_t<decltype(w.x)>;
            std::array<T, 2> g{T(1.0), T(1.0)};
            return hocbf::psi_eval<2>(w, g, obs, 0.0, kL);
        };
        double dd = dynamics::directional_derivative(psi2, a, udot, kL);

        double eps = 1e-5;
        auto value_at = [&](double t) {
            AugmentedState z = advance(a, udot, t);
            AugT<double> w{z.s.x, z.s.y, z.s.theta, z.s.v, z.u.u1, z.u.u2};
            std::array<double, 2> g{1.0, 1.0};
            return hocbf::psi_eval<2>(w, g, obs, 0.0, kL);
        };
        double fd = (value_at(eps) - value_at(-eps)) / (2 * eps);
        double scale = std::max({1.0, std::fabs(fd), std::fabs(dd)});
        CHECK(std::fabs(fd - dd) / scale < 1e-5);
    }
}

TEST_CASE("linearize_in_rate reconstructs the directional derivative") {
    auto rng = make_rng(11, 5);
    hocbf::ObstacleDisk obs{15.0, -2.0, 5.0, 1.0};
    std::uniform_real_distribution<double> ud(-3.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        AugmentedState a = random_aug(rng);
        auto psi2 = [&](const auto& w) {
            using T = std::decay_t<decltype(w.x)>;
            std::array<T, 2> g{T(1.3), T(0.7)};
            return hocbf::psi_eval<2>(w, g, obs, 0.0, kL);
        };
        auto [row, c] = dynamics::linearize_in_rate(psi2, a, kL);
        for (int k = 0; k < 5; ++k) {
            ControlPair udot{ud(rng), ud(rng)};
            double lhs = row[0] * udot.u1 + row[1] * udot.u2 + c;
            double rhs = dynamics::directional_derivative(psi2, a, udot, kL);
            CHECK(std::fabs(lhs - rhs) <=
                  1e-12 * std::max(1.0, std::fabs(rhs)));
        }
    }
}

TEST_CASE("linearize_in_rate of a control-free function has a zero row") {
    AugmentedState a{{3, -1, 0.4, 6}, {0.2, 1.0}};
    auto f = [](const auto& w) { return w.x * w.x + w.v; };
    auto [row, c] = dynamics::linearize_in_rate(f, a, kL);
    CHECK(row[0] == 0.0);
    CHECK(row[1] == 0.0);
    CHECK(c != 0.0);
}

TEST_CASE("steering coefficient of psi2 matches the hand formula") {
    // d psi2 / d u2 = 2(x-x0)cos th + 2(y-y0)sin th for the centered disk.
    hocbf::ObstacleDisk obs{20.0, 0.0, 5.0, 0.0};
    AugmentedState a{{2.0, 1.5, 0.35, 8.0}, {0.1, 0.5}};
    auto psi2 = [&](const auto& w) {
        using T = std::decay_t<decltype(w.x)>;
        std::array<T, 2> g{T(1.0), T(1.0)};
        return hocbf::psi_eval<2>(w, g, obs, 0.0, kL);
    };
    auto [row, c] = dynamics::linearize_in_rate(psi2, a, kL);
    (void)c;
    double expect = 2 * (a.s.x - obs.cx) * std::cos(a.s.theta) +
                    2 * (a.s.y - obs.cy) * std::sin(a.s.theta);
    CHECK(row[1] == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("flow is translation invariant in position") {
    auto rng = make_rng(3, 6);
    for (int trial = 0; trial < 100; ++trial) {
        AugmentedState a = random_aug(rng);
        VehicleState d0 = dynamics::bicycle_flow(a.s, a.u, kL);
        VehicleState shifted = a.s;
        shifted.x += 117.0;
        shifted.y -= 55.5;
        VehicleState d1 = dynamics::bicycle_flow(shifted, a.u, kL);
        CHECK(d0.x == d1.x);
        CHECK(d0.y == d1.y);
        CHECK(d0.theta == d1.theta);
        CHECK(d0.v == d1.v);
    }
}

TEST_CASE("rk4 step reverse mode matches finite differences") {
    auto rng = make_rng(19, 7);
    std::uniform_real_distribution<double> gd(-1.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        AugmentedState a = random_aug(rng);
        double h = 0.1;
        VehicleState gout{gd(rng), gd(rng), gd(rng), gd(rng)};
        VehicleState gs{};
        ControlPair gu{};
        dynamics::rk4_step_vjp(a.s, a.u, h, kL, gout, gs, gu);

        auto loss = [&](const VehicleState& s, const ControlPair& u) {
            VehicleState n = dynamics::rk4_step(s, u, h, kL);
            return gout.x * n.x + gout.y * n.y + gout.theta * n.theta +
                   gout.v * n.v;
        };
        double delta = 1e-6;
        double vals[6] = {a.s.x, a.s.y, a.s.theta, a.s.v, a.u.u1, a.u.u2};
        double grads[6] = {gs.x, gs.y, gs.theta, gs.v, gu.u1, gu.u2};
        for (int k = 0; k < 6; ++k) {
            auto eval = [&](double dv) {
                double w[6];
                std::copy(vals, vals + 6, w);
                w[k] += dv;
                return loss({w[0], w[1], w[2], w[3]}, {w[4], w[5]});
            };
            double fd = (eval(delta) - eval(-delta)) / (2 * delta);
            double scale = std::max({1.0, std::fabs(fd), std::fabs(grads[k])});
            CHECK(std::fabs(fd - grads[k]) / scale < 1e-5);
        }
    }
}
