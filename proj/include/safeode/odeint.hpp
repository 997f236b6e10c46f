#pragma once

// Generic ODE integration: adaptive Dormand-Prince 5(4) with an embedded
// error estimate and FSAL, plus fixed-step Adams-Bashforth 4 warmed up with
// RK4. Both record every accepted step.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace safeode::odeint {

enum class Method { dopri5, fixed_adams };

struct SolverConfig {
    Method method = Method::dopri5;
    double rtol = 1e-6;
    double atol = 1e-8;
    double h = 0.01;  // fixed-step size
    int max_steps = 1000000;
};

struct StepDiagnostics {
    int accepted = 0;
    int rejected = 0;
    double max_err_ratio = 0.0;  // largest accepted error/tolerance ratio
};

struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;
    StepDiagnostics diag;
    bool truncated = false;
    std::string failure;
};

using Field = std::function<void(double t, const double* z, double* dz)>;

Trajectory integrate(const Field& f, const std::vector<double>& z0, double t0,
                     double t1, const SolverConfig& cfg);

}  // namespace safeode::odeint
