#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safeode/diffqp.hpp"
#include "safeode/hocbf.hpp"
#include "safeode/rng.hpp"

using namespace safeode;
using hocbf::BarrierStack;
using hocbf::ObstacleDisk;

namespace {

constexpr double kL = 2.0;

AugmentedState random_aug(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pos(-25.0, 25.0);
    std::uniform_real_distribution<double> ang(-1.3, 1.3);
    std::uniform_real_distribution<double> spd(0.2, 12.0);
    std::uniform_real_distribution<double> steer(-0.55, 0.55);
    std::uniform_real_distribution<double> accel(-4.0, 4.0);
    return {{pos(rng), pos(rng), ang(rng), spd(rng)},
            {steer(rng), accel(rng)}};
}

}  // namespace

TEST_CASE("barrier value at canonical points") {
    ObstacleDisk o{20.0, 0.0, 5.0, 0.0};
    CHECK(hocbf::barrier({20.0, 0.0, 0, 0}, o) == doctest::Approx(-25.0));
    CHECK(hocbf::barrier({0.0, 0.0, 0, 0}, o) == doctest::Approx(375.0));
    // Shifted center: the disk sits y_off below the obstacle's nominal center.
    ObstacleDisk s{10.0, 3.0, 5.0, 1.0};
    CHECK(hocbf::barrier({10.0, 2.0, 0, 0}, s) == doctest::Approx(-25.0));
    CHECK(hocbf::barrier({15.0, 2.0, 0, 0}, s) == doctest::Approx(0.0));
}

TEST_CASE("psi chain at the canonical state") {
    ObstacleDisk o{20.0, 0.0, 5.0, 0.0};
    BarrierStack st;
    st.obstacle = o;
    AugmentedState a{{0, 0, 0, 10}, {0, 0}};
    auto chain = hocbf::psi_chain(a, st, kL);
    REQUIRE(chain.size() == 3);
    CHECK(chain[0] == doctest::Approx(375.0));
    // bdot = 2(x-x0) v cos th + 2(y-y0) v sin th = -400.
    CHECK(chain[1] == doctest::Approx(-25.0));
    // d2b/dt2 at zero controls reduces to 2 v^2 = 200, so
    // psi2 = 200 + 2(-400) + 375 = -225.
    CHECK(chain[2] == doctest::Approx(-225.0));
    CHECK(hocbf::motivating_psi2(a.s, a.u, o, kL) == doctest::Approx(-225.0));
}

TEST_CASE("unit-gain recursion equals the closed form at random states") {
    auto rng = make_rng(2024, 8);
    ObstacleDisk o{18.0, -3.0, 5.0, 0.0};
    BarrierStack st;
    st.obstacle = o;
    for (int trial = 0; trial < 1000; ++trial) {
        AugmentedState a = random_aug(rng);
        auto chain = hocbf::psi_chain(a, st, kL);
        double closed = hocbf::motivating_psi2(a.s, a.u, o, kL);
        double scale = std::max({1.0, std::fabs(closed), std::fabs(chain[2])});
        CHECK(std::fabs(chain[2] - closed) / scale < 1e-9);
    }
}

TEST_CASE("steering term vanishes at zero steering") {
    ObstacleDisk o{20.0, 0.0, 5.0, 0.0};
    VehicleState s{3.0, 2.0, 0.7, 9.0};
    double with_u2 = hocbf::motivating_psi2(s, {0.0, 2.5}, o, kL);
    double base = hocbf::motivating_psi2(s, {0.0, 0.0}, o, kL);
    double dx = s.x - o.cx, dy = s.y - o.cy;
    double expect =
        (2 * dx * std::cos(s.theta) + 2 * dy * std::sin(s.theta)) * 2.5;
    CHECK(with_u2 - base == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("drifting obstacle changes the chain through relative velocity") {
    ObstacleDisk o{20.0, 0.0, 5.0, 0.0};
    BarrierStack st;
    st.obstacle = o;
    st.drift_vx = 6.0;
    AugmentedState a{{0, 0, 0, 10}, {0, 0}};
    auto chain = hocbf::psi_chain(a, st, kL);
    // bdot = 2(x-x0)(v cos th - drift) = 2(-20)(4) = -160.
    CHECK(chain[1] == doctest::Approx(-160.0 + 375.0));
}

TEST_CASE("lifted row reconstructs the rate derivative") {
    auto rng = make_rng(5, 9);
    ObstacleDisk o{22.0, 2.0, 5.6, 1.0};
    BarrierStack st;
    st.obstacle = o;
    st.gains = {1.4, 0.8, 1.1};
    st.theta_p = 0.9;
    st.drift_vx = 6.0;
    std::uniform_real_distribution<double> ud(-3.0, 3.0);
    for (int trial = 0; trial < 30; ++trial) {
        AugmentedState a = random_aug(rng);
        hocbf::LinearRow row = hocbf::lifted_constraint(a, st, kL);

        auto psi2 = [&](const auto& w) {
            using T = std::decay_t<decltype(w.x)>;
            std::array<T, 2> g{T(st.gains[0]), T(st.gains[1])};
            return hocbf::psi_eval<2>(w, g, st.obstacle, st.drift_vx, kL);
        };
        std::array<double, 2> gd{st.gains[0], st.gains[1]};
        dynamics::AugT<double> ad{a.s.x, a.s.y, a.s.theta, a.s.v, a.u.u1, a.u.u2};
        double psi_m = hocbf::psi_eval<2>(ad, gd, st.obstacle, st.drift_vx, kL);
        for (int k = 0; k < 4; ++k) {
            ControlPair udot{ud(rng), ud(rng)};
            double lhs = row.a[0] * udot.u1 + row.a[1] * udot.u2 + row.c;
            double rhs = dynamics::directional_derivative(psi2, a, udot, kL,
                                                          st.drift_vx) +
                         st.theta_p * st.gains[2] * psi_m;
            CHECK(std::fabs(lhs - rhs) <= 1e-11 * std::max(1.0, std::fabs(rhs)));
        }
    }
}

TEST_CASE("receding far-away vehicle leaves the zero rate feasible") {
    ObstacleDisk o{-40.0, 0.0, 5.0, 0.0};  // behind the ego
    BarrierStack st;
    st.obstacle = o;
    AugmentedState a{{0, 0, 0, 8}, {0, 0}};  // driving away from it
    hocbf::LinearRow row = hocbf::lifted_constraint(a, st, kL);
    CHECK(row.c > 0.0);
}

TEST_CASE("row jacobian matches finite differences of the row") {
    auto rng = make_rng(77, 10);
    ObstacleDisk o{19.0, 1.0, 5.6, 1.0};
    for (int trial = 0; trial < 10; ++trial) {
        BarrierStack st;
        st.obstacle = o;
        st.gains = {1.2, 0.9, 1.3};
        st.theta_p = 0.8;
        st.drift_vx = 6.0;
        AugmentedState a = random_aug(rng);
        auto [row, jac] = hocbf::lifted_constraint_grad(a, st, kL);

        auto eval = [&](int slot, double dv) {
            AugmentedState aa = a;
            BarrierStack ss = st;
            switch (slot) {
                case 0: aa.s.x += dv; break;
                case 1: aa.s.y += dv; break;
                case 2: aa.s.theta += dv; break;
                case 3: aa.s.v += dv; break;
                case 4: aa.u.u1 += dv; break;
                case 5: aa.u.u2 += dv; break;
                case 6: ss.gains[0] += dv; break;
                case 7: ss.gains[1] += dv; break;
                case 8: ss.gains[2] += dv; break;
                case 9: ss.theta_p += dv; break;
            }
            return hocbf::lifted_constraint(aa, ss, kL);
        };
        double delta = 1e-6;
        for (int k = 0; k < 8; ++k) {
            auto rp = eval(k, delta);
            auto rm = eval(k, -delta);
            double fd_a0 = (rp.a[0] - rm.a[0]) / (2 * delta);
            double fd_a1 = (rp.a[1] - rm.a[1]) / (2 * delta);
            double fd_c = (rp.c - rm.c) / (2 * delta);
            CHECK(jac.da[0][k] ==
                  doctest::Approx(fd_a0).epsilon(1e-4).scale(1.0));
            CHECK(jac.da[1][k] ==
                  doctest::Approx(fd_a1).epsilon(1e-4).scale(1.0));
            CHECK(jac.dc[k] == doctest::Approx(fd_c).epsilon(1e-4).scale(1.0));
        }
        auto rp = eval(8, delta);
        auto rm = eval(8, -delta);
        CHECK(jac.dc_dp3 ==
              doctest::Approx((rp.c - rm.c) / (2 * delta)).epsilon(1e-6));
        CHECK(rp.a[0] == rm.a[0]);  // a is exactly independent of p3
        rp = eval(9, delta);
        rm = eval(9, -delta);
        CHECK(jac.dc_dthetap ==
              doctest::Approx((rp.c - rm.c) / (2 * delta)).epsilon(1e-6));
        CHECK(rp.a[1] == rm.a[1]);  // and of theta_p
    }
}

TEST_CASE("bound rows at the box boundary and midpoint") {
    ControlBounds b;
    b.u_min = {-1.0, -1.0};
    b.u_max = {1.0, 1.0};
    auto at_min = hocbf::bound_rows(b.u_min, b);
    CHECK(at_min[0].c == doctest::Approx(0.0));
    CHECK(at_min[1].c == doctest::Approx(0.0));
    CHECK(at_min[0].a[0] == 1.0);
    CHECK(at_min[1].a[1] == 1.0);

    auto mid = hocbf::bound_rows({0.0, 0.0}, b);
    for (int j = 0; j < 4; ++j) CHECK(mid[j].c == doctest::Approx(1.0));

    // The class-K gain scales only the admissible-rate constants, not the
    // row directions.
    auto fast = hocbf::bound_rows({0.25, -0.5}, b, 10.0);
    auto slow = hocbf::bound_rows({0.25, -0.5}, b);
    for (int j = 0; j < 4; ++j) {
        CHECK(fast[j].c == doctest::Approx(10.0 * slow[j].c));
        CHECK(fast[j].a[0] == slow[j].a[0]);
        CHECK(fast[j].a[1] == slow[j].a[1]);
    }
}

TEST_CASE("integrating rate constraints keeps controls inside the box") {
    ControlBounds b;  // default asymmetric box
    auto rng = make_rng(13, 11);
    std::uniform_real_distribution<double> yd(-6.0, 6.0);
    ControlPair u{0.0, 0.0};
    double h = 0.1;
    for (int step = 0; step < 1000; ++step) {
        auto rows = hocbf::bound_rows(u, b);
        diffqp::QPProblem p;
        p.y = {yd(rng), yd(rng)};
        p.rows.assign(rows.begin(), rows.end());
        auto sol = diffqp::solve(p);
        u.u1 += h * sol.y_hat[0];
        u.u2 += h * sol.y_hat[1];
        CHECK(u.u1 >= b.u_min.u1 - 1e-9);
        CHECK(u.u1 <= b.u_max.u1 + 1e-9);
        CHECK(u.u2 >= b.u_min.u2 - 1e-9);
        CHECK(u.u2 <= b.u_max.u2 + 1e-9);
    }

    // Same invariance at the runtime gain; the admissible rate shrinks
    // linearly toward the boundary, so an explicit step <= 1/kappa cannot
    // overshoot it.
    const double kappa = 10.0;
    u = {0.0, 0.0};
    h = 0.05;
    std::uniform_real_distribution<double> yw(-60.0, 60.0);
    for (int step = 0; step < 1000; ++step) {
        auto rows = hocbf::bound_rows(u, b, kappa);
        diffqp::QPProblem p;
        p.y = {yw(rng), yw(rng)};
        p.rows.assign(rows.begin(), rows.end());
        auto sol = diffqp::solve(p);
        u.u1 += h * sol.y_hat[0];
        u.u2 += h * sol.y_hat[1];
        CHECK(u.u1 >= b.u_min.u1 - 1e-9);
        CHECK(u.u1 <= b.u_max.u1 + 1e-9);
        CHECK(u.u2 >= b.u_min.u2 - 1e-9);
        CHECK(u.u2 <= b.u_max.u2 + 1e-9);
    }
}
