#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "safeode/dynamics.hpp"
#include "safeode/model.hpp"

using namespace safeode;

namespace {

// Small network so finite differences stay cheap; 4 lidar rays + 4 scalars.
const neuralnet::MLPSpec kSmallSpec{{8, 6, 4, 2}};

ModelCheckpoint small_checkpoint(std::uint64_t seed) {
    ModelCheckpoint c;
    c.spec = kSmallSpec;
    c.params = neuralnet::xavier_init(kSmallSpec, seed).flat;
    c.gains = {1.0, 1.0, 1.0};
    c.theta_p = 1.0;
    return c;
}

model::ScanFn fixed_scan(std::vector<double> v) {
    return [v](double, const VehicleState&) { return v; };
}

struct LinearLoss {
    std::vector<std::array<double, 2>> w;
    double operator()(const std::vector<std::array<double, 6>>& pts) const {
        double L = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            L += w[k][0] * pts[k + 1][4] + w[k][1] * pts[k + 1][5];
        }
        return L;
    }
};

double rel_err(double got, double want) {
    const double denom = std::max({std::fabs(got), std::fabs(want), 1e-10});
    return std::fabs(got - want) / denom;
}

}  // namespace

TEST_CASE("a vanishing obstacle makes the filter transparent") {
    auto ckpt = small_checkpoint(11);
    model::SynthOptions opt;
    opt.obstacle = {1000.0, 0.0, 1e-6, 0.0};
    auto scan = fixed_scan({30.0, 20.0, 10.0, 40.0});
    VehicleState s0{0.0, 0.0, 0.1, 5.0};
    ControlPair u0{0.05, 0.5};

    auto filtered = model::integrate_synthesized(ckpt, s0, u0, scan, 0.0, 0.5, opt);
    opt.filter = model::RateFilter::none;
    auto raw = model::integrate_synthesized(ckpt, s0, u0, scan, 0.0, 0.5, opt);

    REQUIRE(filtered.traj.states.size() == raw.traj.states.size());
    for (std::size_t i = 0; i < raw.traj.states.size(); ++i)
        for (int c = 0; c < 6; ++c)
            CHECK(filtered.traj.states[i][c] == raw.traj.states[i][c]);
    CHECK_FALSE(filtered.qp_infeasible);
    for (const auto& row : filtered.rows) CHECK(row.qp_active == 0);
}

TEST_CASE("the filtered control stays inside its box") {
    auto ckpt = small_checkpoint(3);
    for (double& p : ckpt.params) p *= 50.0;  // aggressive rates
    ckpt.gains = {2.0, 2.0, 2.0};
    model::SynthOptions opt;
    opt.obstacle = {40.0, 0.0, 8.0, 0.0};
    auto scan = fixed_scan({12.0, 25.0, 50.0, 8.0});
    auto res = model::integrate_synthesized(ckpt, {0.0, 0.0, 0.0, 8.0},
                                            {0.0, 0.0}, scan, 0.0, 2.0, opt);
    REQUIRE_FALSE(res.qp_infeasible);
    ControlBounds b;
    for (const auto& s : res.traj.states) {
        CHECK(s[4] >= b.u_min.u1 - 1e-5);
        CHECK(s[4] <= b.u_max.u1 + 1e-5);
        CHECK(s[5] >= b.u_min.u2 - 1e-5);
        CHECK(s[5] <= b.u_max.u2 + 1e-5);
        CHECK(std::fabs(s[4]) < dynamics::kSteerLimit);
    }
}

TEST_CASE("observations are sampled once per refresh period and held") {
    auto ckpt = small_checkpoint(5);
    int calls = 0;
    model::ScanFn scan = [&calls](double, const VehicleState&) {
        ++calls;
        return std::vector<double>{30.0, 30.0, 30.0, 30.0};
    };
    model::SynthOptions opt;
    opt.obstacle = {1000.0, 0.0, 1.0, 0.0};
    model::integrate_synthesized(ckpt, {0, 0, 0, 5}, {0, 0}, scan, 0.0, 1.0, opt);
    CHECK(calls == 10);
}

TEST_CASE("an unsatisfiable safety row truncates the episode") {
    auto ckpt = small_checkpoint(7);
    ckpt.gains = {10.0, 10.0, 10.0};
    model::SynthOptions opt;
    opt.obstacle = {20.0, 0.0, 10.0, 0.0};
    auto scan = fixed_scan({10.0, 10.0, 10.0, 10.0});
    // Fast head-on approach this close needs a deceleration rate far beyond
    // what the remaining box gap allows.
    auto res = model::integrate_synthesized(ckpt, {9.0, 0.0, 0.0, 30.0},
                                            {0.0, 0.0}, scan, 0.0, 1.0, opt);
    CHECK(res.qp_infeasible);
    CHECK(res.traj.truncated);
    CHECK(res.t_end < 1.0);
}

TEST_CASE("rollout gradients match finite differences with inactive rows") {
    auto net = neuralnet::xavier_init(kSmallSpec, 21);
    std::array<double, 3> gains{1.0, 1.0, 1.0};
    const double theta_p = 1.0;
    model::SynthOptions opt;
    opt.obstacle = {1000.0, 0.0, 1.0, 0.0};
    model::InputNorms norms{1.0 / 50.0, 1.0, 0.1, 1.0 / 0.6, 0.2};

    VehicleState s0{0.0, 0.0, 0.1, 5.0};
    ControlPair u0{0.05, 0.5};
    std::vector<std::vector<double>> scans = {{30, 20, 10, 40},
                                              {28, 22, 12, 38},
                                              {26, 24, 14, 36}};
    const double dt = 0.1;
    const int n_sub = 2;
    LinearLoss loss{{{0.7, -0.3}, {0.2, 0.9}, {-0.5, 0.4}}};

    model::TapedRollout roll(opt, norms);
    REQUIRE(roll.forward(net, gains, theta_p, s0, u0, scans, dt, n_sub));
    auto grads = roll.backward(net, loss.w);

    auto loss_at = [&](const neuralnet::MLPParams& n2,
                       const std::array<double, 3>& g2, double tp2) {
        model::TapedRollout r2(opt, norms);
        REQUIRE(r2.forward(n2, g2, tp2, s0, u0, scans, dt, n_sub));
        return loss(r2.points());
    };

    const double eps = 1e-6;
    const int np = neuralnet::param_count(kSmallSpec);
    for (int i = 0; i < np; i += 7) {
        auto n2 = net;
        n2.flat[i] += eps;
        const double lp = loss_at(n2, gains, theta_p);
        n2.flat[i] -= 2 * eps;
        const double lm = loss_at(n2, gains, theta_p);
        const double fd = (lp - lm) / (2 * eps);
        CHECK(rel_err(grads.params[i], fd) <= 1e-4);
    }
    // Far obstacle: the safety row never binds, so the barrier parameters
    // cannot influence the loss and their gradients are exactly zero.
    for (int i = 0; i < 3; ++i) CHECK(grads.gains[i] == 0.0);
    CHECK(grads.theta_p == 0.0);
}

TEST_CASE("rollout gradients match finite differences with the safety row active") {
    auto net = neuralnet::xavier_init(kSmallSpec, 22);
    std::array<double, 3> gains{1.0, 1.0, 1.0};
    const double theta_p = 1.0;
    model::SynthOptions opt;
    opt.obstacle = {30.0, 0.0, 10.0, 0.0};
    model::InputNorms norms{1.0 / 50.0, 1.0, 0.1, 1.0 / 0.6, 0.2};

    VehicleState s0{12.0, 0.0, 0.0, 4.0};
    ControlPair u0{0.0, 0.0};
    std::vector<std::vector<double>> scans = {{14, 30, 50, 22}, {13, 29, 49, 21}};
    const double dt = 0.1;
    const int n_sub = 1;
    LinearLoss loss{{{0.6, 0.8}, {-0.4, 0.5}}};

    model::TapedRollout roll(opt, norms);
    REQUIRE(roll.forward(net, gains, theta_p, s0, u0, scans, dt, n_sub));
    // The scenario only makes sense if the filter actually intervenes.
    bool active = false;
    for (const auto& z : roll.points()) (void)z;
    {
        model::SynthOptions o2 = opt;
        ModelCheckpoint c;
        c.spec = kSmallSpec;
        c.params = net.flat;
        c.gains = gains;
        c.theta_p = theta_p;
        auto res = model::integrate_synthesized(c, s0, u0, fixed_scan(scans[0]),
                                                0.0, 0.2, o2);
        for (const auto& row : res.rows) active = active || row.qp_active == 1;
    }
    CHECK(active);

    auto grads = roll.backward(net, loss.w);
    auto loss_at = [&](const neuralnet::MLPParams& n2,
                       const std::array<double, 3>& g2, double tp2) {
        model::TapedRollout r2(opt, norms);
        REQUIRE(r2.forward(n2, g2, tp2, s0, u0, scans, dt, n_sub));
        return loss(r2.points());
    };

    const double eps = 1e-6;
    const int np = neuralnet::param_count(kSmallSpec);
    int checked = 0;
    for (int i = 0; i < np; i += 11) {
        auto n2 = net;
        n2.flat[i] += eps;
        const double lp = loss_at(n2, gains, theta_p);
        n2.flat[i] -= 2 * eps;
        const double lm = loss_at(n2, gains, theta_p);
        const double fd = (lp - lm) / (2 * eps);
        if (std::fabs(fd) > 1e-9) {
            CHECK(rel_err(grads.params[i], fd) <= 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 0);

    for (int i = 0; i < 3; ++i) {
        auto g2 = gains;
        g2[i] += eps;
        const double lp = loss_at(net, g2, theta_p);
        g2[i] -= 2 * eps;
        const double lm = loss_at(net, g2, theta_p);
        const double fd = (lp - lm) / (2 * eps);
        CHECK(rel_err(grads.gains[i], fd) <= 1e-4);
    }
    {
        const double lp = loss_at(net, gains, theta_p + eps);
        const double lm = loss_at(net, gains, theta_p - eps);
        const double fd = (lp - lm) / (2 * eps);
        CHECK(rel_err(grads.theta_p, fd) <= 1e-4);
    }
}

TEST_CASE("zero upstream yields exactly zero gradients") {
    auto net = neuralnet::xavier_init(kSmallSpec, 23);
    model::SynthOptions opt;
    opt.obstacle = {30.0, 0.0, 10.0, 0.0};
    model::InputNorms norms;
    model::TapedRollout roll(opt, norms);
    REQUIRE(roll.forward(net, {1, 1, 1}, 1.0, {12, 0, 0, 4}, {0, 0},
                         {{14, 30, 50, 22}}, 0.1, 2));
    auto grads = roll.backward(net, {{{0.0, 0.0}}});
    for (double g : grads.params) CHECK(g == 0.0);
    for (double g : grads.gains) CHECK(g == 0.0);
    CHECK(grads.theta_p == 0.0);
}
