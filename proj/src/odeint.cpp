#include "safeode/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace safeode::odeint {
namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Dormand-Prince 5(4) tableau. The last stage evaluates the field at the
// accepted point, so it doubles as the first stage of the next step (FSAL).
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// Difference between the 5th- and 4th-order weights.
constexpr double kE[7] = {71.0 / 57600,     0.0,        -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

Trajectory run_dopri5(const Field& f, const std::vector<double>& z0, double t0,
                      double t1, const SolverConfig& cfg) {
    const int n = static_cast<int>(z0.size());
    Trajectory out;
    out.times.push_back(t0);
    out.states.push_back(z0);
    if (t1 <= t0) return out;

    std::vector<double> z = z0, z_new(n), z_stage(n), err(n);
    std::vector<std::vector<double>> k(7, std::vector<double>(n));

    f(t0, z.data(), k[0].data());

    // Initial step from the field magnitude at the start point.
    double d0 = 0.0, d1 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double sc = cfg.atol + cfg.rtol * std::abs(z[i]);
        d0 = std::max(d0, std::abs(z[i]) / sc);
        d1 = std::max(d1, std::abs(k[0][i]) / sc);
    }
    double h = (d1 > 1e-10) ? 0.01 * std::max(d0, 1.0) / d1 : 1e-6;
    h = std::min(h, t1 - t0);

    double t = t0;
    bool last_rejected = false;
    while (t < t1) {
        if (out.diag.accepted + out.diag.rejected >= cfg.max_steps)
            throw std::runtime_error("dopri5: step limit exceeded");
        h = std::min(h, t1 - t);
        if (h < 16.0 * std::numeric_limits<double>::epsilon() *
                    std::max(std::abs(t), t1 - t0))
            throw std::runtime_error("dopri5: step size underflow");

        for (int s = 1; s < 7; ++s) {
            for (int i = 0; i < n; ++i) {
                double acc = z[i];
                for (int j = 0; j < s; ++j) acc += h * kA[s][j] * k[j][i];
                z_stage[i] = acc;
            }
            f(t + kC[s] * h, z_stage.data(), k[s].data());
        }
        // Stage 7 already lands on the 5th-order solution.
        z_new = z_stage;
        for (int i = 0; i < n; ++i) {
            double e = 0.0;
            for (int s = 0; s < 7; ++s) e += kE[s] * k[s][i];
            err[i] = h * e;
        }
        if (!all_finite(z_new))
            throw std::runtime_error("dopri5: state is not finite");

        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const double sc = cfg.atol +
                              cfg.rtol * std::max(std::abs(z[i]), std::abs(z_new[i]));
            const double r = err[i] / sc;
            sum += r * r;
        }
        const double ratio = std::sqrt(sum / n);

        double factor = (ratio > 0.0)
                            ? 0.9 * std::pow(ratio, -0.2)
                            : 5.0;
        factor = std::clamp(factor, 0.2, 5.0);

        if (ratio <= 1.0) {
            t += h;
            z = z_new;
            k[0] = k[6];
            out.times.push_back(t);
            out.states.push_back(z);
            ++out.diag.accepted;
            out.diag.max_err_ratio = std::max(out.diag.max_err_ratio, ratio);
            if (last_rejected) factor = std::min(factor, 1.0);
            last_rejected = false;
        } else {
            ++out.diag.rejected;
            last_rejected = true;
        }
        h *= factor;
    }
    return out;
}

Trajectory run_fixed_adams(const Field& f, const std::vector<double>& z0,
                           double t0, double t1, const SolverConfig& cfg) {
    const int n = static_cast<int>(z0.size());
    Trajectory out;
    out.times.push_back(t0);
    out.states.push_back(z0);
    if (t1 <= t0) return out;
    if (cfg.h <= 0.0) throw std::invalid_argument("fixed_adams: h must be > 0");

    const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / cfg.h - 1e-12)));
    if (steps > cfg.max_steps)
        throw std::runtime_error("fixed_adams: step limit exceeded");
    const double h = (t1 - t0) / steps;

    std::vector<double> z = z0, tmp(n);
    std::vector<double> k1(n), k2(n), k3(n), k4(n);
    // History of field values at the last four grid points, newest last.
    std::vector<std::vector<double>> hist;
    hist.reserve(4);
    f(t0, z.data(), k1.data());
    hist.push_back(k1);

    for (int s = 0; s < steps; ++s) {
        const double t = t0 + s * h;
        if (static_cast<int>(hist.size()) < 4) {
            // RK4 warmup until four field samples exist. The newest history
            // entry is the field at the current grid point.
            k1 = hist.back();
            for (int i = 0; i < n; ++i) tmp[i] = z[i] + 0.5 * h * k1[i];
            f(t + 0.5 * h, tmp.data(), k2.data());
            for (int i = 0; i < n; ++i) tmp[i] = z[i] + 0.5 * h * k2[i];
            f(t + 0.5 * h, tmp.data(), k3.data());
            for (int i = 0; i < n; ++i) tmp[i] = z[i] + h * k3[i];
            f(t + h, tmp.data(), k4.data());
            for (int i = 0; i < n; ++i)
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            f(t + h, z.data(), k1.data());
            hist.push_back(k1);
        } else {
            const auto& f0 = hist[3];  // newest
            const auto& f1 = hist[2];
            const auto& f2 = hist[1];
            const auto& f3 = hist[0];
            for (int i = 0; i < n; ++i)
                z[i] += h / 24.0 *
                        (55.0 * f0[i] - 59.0 * f1[i] + 37.0 * f2[i] - 9.0 * f3[i]);
            f(t + h, z.data(), k1.data());
            hist.erase(hist.begin());
            hist.push_back(k1);
        }
        if (!all_finite(z))
            throw std::runtime_error("fixed_adams: state is not finite");
        out.times.push_back(t + h);
        out.states.push_back(z);
        ++out.diag.accepted;
    }
    return out;
}

}  // namespace

Trajectory integrate(const Field& f, const std::vector<double>& z0, double t0,
                     double t1, const SolverConfig& cfg) {
    if (z0.empty()) throw std::invalid_argument("integrate: empty state");
    if (cfg.method == Method::dopri5) return run_dopri5(f, z0, t0, t1, cfg);
    return run_fixed_adams(f, z0, t0, t1, cfg);
}

}  // namespace safeode::odeint
