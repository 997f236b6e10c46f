#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "safeode/odeint.hpp"

using namespace safeode;

namespace {

odeint::Field exp_decay() {
    return [](double, const double* z, double* dz) { dz[0] = -z[0]; };
}

double terminal_error_adams(double h) {
    odeint::SolverConfig cfg;
    cfg.method = odeint::Method::fixed_adams;
    cfg.h = h;
    auto tr = odeint::integrate(exp_decay(), {1.0}, 0.0, 2.0, cfg);
    return std::fabs(tr.states.back()[0] - std::exp(-2.0));
}

}  // namespace

TEST_CASE("dopri5 meets its own tolerance on exponential decay") {
    odeint::SolverConfig cfg;  // rtol 1e-6, atol 1e-8
    auto tr = odeint::integrate(exp_decay(), {1.0}, 0.0, 5.0, cfg);
    const double z_true = std::exp(-5.0);
    CHECK(std::fabs(tr.states.back()[0] - z_true) <=
          10.0 * cfg.rtol * std::fabs(z_true) + cfg.atol);
    CHECK(tr.times.back() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(tr.times.size() == tr.states.size());
    CHECK(static_cast<int>(tr.times.size()) == tr.diag.accepted + 1);
    CHECK(tr.diag.max_err_ratio <= 1.0);  // no accepted step may exceed tol
    for (std::size_t i = 1; i < tr.times.size(); ++i)
        CHECK(tr.times[i] > tr.times[i - 1]);
}

TEST_CASE("a zero field leaves the state bit-identical") {
    odeint::Field f = [](double, const double*, double* dz) { dz[0] = 0.0; dz[1] = 0.0; };
    for (auto method : {odeint::Method::dopri5, odeint::Method::fixed_adams}) {
        odeint::SolverConfig cfg;
        cfg.method = method;
        auto tr = odeint::integrate(f, {0.3, -7.25}, 0.0, 1.0, cfg);
        for (const auto& s : tr.states) {
            CHECK(s[0] == 0.3);
            CHECK(s[1] == -7.25);
        }
    }
}

TEST_CASE("harmonic oscillator energy drift stays below 1e-6 over 10 periods") {
    odeint::Field f = [](double, const double* z, double* dz) {
        dz[0] = z[1];
        dz[1] = -z[0];
    };
    odeint::SolverConfig cfg;
    cfg.rtol = 1e-8;
    auto tr = odeint::integrate(f, {1.0, 0.0}, 0.0, 20.0 * M_PI, cfg);
    const double e0 = 0.5;
    for (const auto& s : tr.states) {
        const double e = 0.5 * (s[0] * s[0] + s[1] * s[1]);
        CHECK(std::fabs(e - e0) <= 1e-6);
    }
}

TEST_CASE("fixed-step Adams-Bashforth shows fourth-order error decay") {
    const double e1 = terminal_error_adams(0.05);
    const double e2 = terminal_error_adams(0.025);
    const double ratio = e1 / e2;
    CHECK(ratio >= 16.0 * 0.8);
    CHECK(ratio <= 16.0 * 1.2);
}

TEST_CASE("fixed-step grid covers [t0, t1] exactly") {
    odeint::SolverConfig cfg;
    cfg.method = odeint::Method::fixed_adams;
    cfg.h = 0.01;
    auto tr = odeint::integrate(exp_decay(), {1.0}, 0.0, 0.095, cfg);
    // 10 equal steps of 0.0095 rather than a ragged tail.
    CHECK(tr.times.size() == 11);
    CHECK(tr.times.back() == doctest::Approx(0.095).epsilon(1e-14));
}

TEST_CASE("the two solvers agree on a nonlinear system") {
    odeint::Field pend = [](double, const double* z, double* dz) {
        dz[0] = z[1];
        dz[1] = -std::sin(z[0]);
    };
    odeint::SolverConfig a;  // dopri5 defaults
    odeint::SolverConfig b;
    b.method = odeint::Method::fixed_adams;
    b.h = 0.01;
    auto ta = odeint::integrate(pend, {2.5, 0.0}, 0.0, 10.0, a);
    auto tb = odeint::integrate(pend, {2.5, 0.0}, 0.0, 10.0, b);
    CHECK(std::fabs(ta.states.back()[0] - tb.states.back()[0]) <= 1e-3);
    CHECK(std::fabs(ta.states.back()[1] - tb.states.back()[1]) <= 1e-3);
}

TEST_CASE("failure modes raise instead of returning garbage") {
    SUBCASE("step limit") {
        odeint::SolverConfig cfg;
        cfg.max_steps = 3;
        CHECK_THROWS_AS(odeint::integrate(exp_decay(), {1.0}, 0.0, 50.0, cfg),
                        std::runtime_error);
    }
    SUBCASE("finite-time blowup") {
        odeint::Field f = [](double, const double* z, double* dz) {
            dz[0] = z[0] * z[0];
        };
        odeint::SolverConfig cfg;
        CHECK_THROWS_AS(odeint::integrate(f, {1.0}, 0.0, 2.0, cfg),
                        std::runtime_error);
    }
    SUBCASE("bad fixed step") {
        odeint::SolverConfig cfg;
        cfg.method = odeint::Method::fixed_adams;
        cfg.h = 0.0;
        CHECK_THROWS_AS(odeint::integrate(exp_decay(), {1.0}, 0.0, 1.0, cfg),
                        std::invalid_argument);
    }
    SUBCASE("empty state") {
        odeint::SolverConfig cfg;
        CHECK_THROWS_AS(odeint::integrate(exp_decay(), {}, 0.0, 1.0, cfg),
                        std::invalid_argument);
    }
}

TEST_CASE("degenerate horizon returns the initial point") {
    odeint::SolverConfig cfg;
    auto tr = odeint::integrate(exp_decay(), {2.0}, 1.0, 1.0, cfg);
    CHECK(tr.times.size() == 1);
    CHECK(tr.states[0][0] == 2.0);
}
