#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safeode/neuralnet.hpp"
#include "safeode/rng.hpp"

using namespace safeode;
using neuralnet::MLPParams;
using neuralnet::MLPSpec;

namespace {

MLPParams random_params(const MLPSpec& spec, std::uint64_t seed) {
    return neuralnet::xavier_init(spec, seed);
}

std::vector<double> random_input(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("parameter layout bookkeeping") {
    MLPSpec spec;
    spec.widths = {104, 128, 256, 64, 16, 2};
    int expect = 104 * 128 + 128 + 128 * 256 + 256 + 256 * 64 + 64 +
                 64 * 16 + 16 + 16 * 2 + 2;
    CHECK(neuralnet::param_count(spec) == expect);
    CHECK(neuralnet::weight_offset(spec, 0) == 0);
    CHECK(neuralnet::bias_offset(spec, 0) == 104 * 128);
    CHECK(neuralnet::weight_offset(spec, 1) == 104 * 128 + 128);
}

TEST_CASE("zero parameters give zero output") {
    MLPSpec spec;
    spec.widths = {5, 4, 2};
    MLPParams p{spec, std::vector<double>(neuralnet::param_count(spec), 0.0)};
    double in[5] = {1, -2, 3, 0.5, -0.1};
    double out[2] = {99, 99};
    neuralnet::forward(p, in, out);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("hand-computed toy network") {
    MLPSpec spec;
    spec.widths = {2, 3, 2};
    MLPParams p{spec, std::vector<double>(neuralnet::param_count(spec), 0.0)};
    // Hidden layer: W0 (3x2), b0; output layer: W1 (2x3), b1.
    double W0[6] = {1.0, 0.5, -0.5, 1.0, 0.25, -0.25};
    double b0[3] = {0.1, -0.1, 0.0};
    double W1[6] = {1.0, -1.0, 0.5, 0.0, 2.0, -0.5};
    double b1[2] = {0.05, -0.05};
    std::copy(W0, W0 + 6, p.flat.begin() + neuralnet::weight_offset(spec, 0));
    std::copy(b0, b0 + 3, p.flat.begin() + neuralnet::bias_offset(spec, 0));
    std::copy(W1, W1 + 6, p.flat.begin() + neuralnet::weight_offset(spec, 1));
    std::copy(b1, b1 + 2, p.flat.begin() + neuralnet::bias_offset(spec, 1));

    double in[2] = {0.3, -0.6};
    double h0 = std::tanh(1.0 * 0.3 + 0.5 * -0.6 + 0.1);
    double h1 = std::tanh(-0.5 * 0.3 + 1.0 * -0.6 - 0.1);
    double h2 = std::tanh(0.25 * 0.3 - 0.25 * -0.6 + 0.0);
    double e0 = 1.0 * h0 - 1.0 * h1 + 0.5 * h2 + 0.05;
    double e1 = 0.0 * h0 + 2.0 * h1 - 0.5 * h2 - 0.05;

    double out[2];
    neuralnet::forward(p, in, out);
    CHECK(out[0] == doctest::Approx(e0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(e1).epsilon(1e-14));
}

TEST_CASE("single linear layer gradient is the outer product") {
    MLPSpec spec;
    spec.widths = {3, 2};
    MLPParams p = random_params(spec, 1);
    double in[3] = {0.4, -0.2, 0.9};
    double out[2];
    neuralnet::Tape tape;
    neuralnet::forward_taped(p, in, tape, out);
    std::vector<double> grad(neuralnet::param_count(spec), 0.0);
    double up[2] = {1.5, -0.5};
    neuralnet::backward(p, tape, up, grad.data(), nullptr);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(grad[r * 3 + c] == doctest::Approx(up[r] * in[c]).epsilon(1e-14));
    CHECK(grad[6] == doctest::Approx(1.5));
    CHECK(grad[7] == doctest::Approx(-0.5));
}

TEST_CASE("zero upstream gives zero gradients") {
    MLPSpec spec;
    spec.widths = {8, 6, 4, 2};
    MLPParams p = random_params(spec, 2);
    auto rng = make_rng(3, 17);
    auto in = random_input(8, rng);
    double out[2];
    neuralnet::Tape tape;
    neuralnet::forward_taped(p, in.data(), tape, out);
    std::vector<double> grad(neuralnet::param_count(spec), 0.0);
    std::vector<double> gin(8, 0.0);
    double up[2] = {0.0, 0.0};
    neuralnet::backward(p, tape, up, grad.data(), gin.data());
    for (double g : grad) CHECK(g == 0.0);
    for (double g : gin) CHECK(g == 0.0);
}

TEST_CASE("gradients match finite differences on the reduced spec") {
    MLPSpec spec;
    spec.widths = {8, 6, 4, 2};
    MLPParams p = random_params(spec, 4);
    auto rng = make_rng(5, 18);
    auto in = random_input(8, rng);
    double up[2] = {0.8, -1.2};

    double out[2];
    neuralnet::Tape tape;
    neuralnet::forward_taped(p, in.data(), tape, out);
    std::vector<double> grad(neuralnet::param_count(spec), 0.0);
    std::vector<double> gin(8, 0.0);
    neuralnet::backward(p, tape, up, grad.data(), gin.data());

    auto loss = [&](const MLPParams& q, const double* x) {
        double o[2];
        neuralnet::forward(q, x, o);
        return up[0] * o[0] + up[1] * o[1];
    };
    double delta = 1e-6;
    for (int k = 0; k < neuralnet::param_count(spec); ++k) {
        MLPParams q = p;
        q.flat[k] += delta;
        double lp = loss(q, in.data());
        q.flat[k] -= 2 * delta;
        double lm = loss(q, in.data());
        double fd = (lp - lm) / (2 * delta);
        double scale = std::max({1.0, std::fabs(fd), std::fabs(grad[k])});
        CHECK(std::fabs(fd - grad[k]) / scale < 1e-4);
    }
    for (int k = 0; k < 8; ++k) {
        auto x = in;
        x[k] += delta;
        double lp = loss(p, x.data());
        x[k] -= 2 * delta;
        double lm = loss(p, x.data());
        double fd = (lp - lm) / (2 * delta);
        double scale = std::max({1.0, std::fabs(fd), std::fabs(gin[k])});
        CHECK(std::fabs(fd - gin[k]) / scale < 1e-4);
    }
}

TEST_CASE("rmsprop step behavior") {
    neuralnet::RMSprop opt;
    std::vector<double> params{0.5, -0.5, 2.0};
    std::vector<double> grads{0.0, 0.0, 0.0};
    opt.acc = {0.4, 0.4, 0.4};
    auto before = params;
    neuralnet::rmsprop_step(params, grads, opt);
    CHECK(params == before);                      // zero gradient: no motion
    for (double a : opt.acc) CHECK(a == doctest::Approx(0.99 * 0.4));

    // Single step from a zero accumulator.
    neuralnet::RMSprop fresh;
    std::vector<double> p1{0.0};
    std::vector<double> g1{1.0};
    neuralnet::rmsprop_step(p1, g1, fresh);
    double expect = -1e-3 / (std::sqrt(0.01) + 1e-8);
    CHECK(p1[0] == doctest::Approx(expect).epsilon(1e-12));

    // Parameters move against the gradient sign.
    neuralnet::RMSprop o2;
    std::vector<double> p2{1.0, -1.0, 0.3};
    std::vector<double> g2{2.5, -0.3, 1e-4};
    auto old = p2;
    neuralnet::rmsprop_step(p2, g2, o2);
    for (int i = 0; i < 3; ++i) {
        if (g2[i] > 0) CHECK(p2[i] < old[i]);
        if (g2[i] < 0) CHECK(p2[i] > old[i]);
    }
}

TEST_CASE("xavier init is seeded, bounded, and deterministic") {
    MLPSpec spec;
    spec.widths = {10, 7, 2};
    MLPParams a = neuralnet::xavier_init(spec, 42);
    MLPParams b = neuralnet::xavier_init(spec, 42);
    MLPParams c = neuralnet::xavier_init(spec, 43);
    CHECK(a.flat == b.flat);
    CHECK(a.flat != c.flat);
    double r0 = std::sqrt(6.0 / (10 + 7));
    for (int i = 0; i < 10 * 7; ++i) CHECK(std::fabs(a.flat[i]) <= r0);
    for (int i = 0; i < 7; ++i)
        CHECK(a.flat[neuralnet::bias_offset(spec, 0) + i] == 0.0);
}

TEST_CASE("outputs respect the spectral-norm Lipschitz bound") {
    MLPSpec spec;
    spec.widths = {8, 6, 4, 2};
    MLPParams p = random_params(spec, 9);
    double L = neuralnet::lipschitz_bound(p);
    CHECK(L > 0.0);
    auto rng = make_rng(10, 19);
    for (int trial = 0; trial < 200; ++trial) {
        auto x1 = random_input(8, rng);
        auto x2 = random_input(8, rng);
        double o1[2], o2[2];
        neuralnet::forward(p, x1.data(), o1);
        neuralnet::forward(p, x2.data(), o2);
        double dout = std::hypot(o1[0] - o2[0], o1[1] - o2[1]);
        double din = 0.0;
        for (int i = 0; i < 8; ++i) din += (x1[i] - x2[i]) * (x1[i] - x2[i]);
        din = std::sqrt(din);
        CHECK(dout <= L * din * (1.0 + 1e-9) + 1e-12);
    }
}
