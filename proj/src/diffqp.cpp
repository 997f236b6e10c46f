#include "safeode/diffqp.hpp"

#include <cmath>
#include <string>

#include "safeode/threading.hpp"

namespace safeode::diffqp {

namespace {

double residual(const LinearRow& r, const std::array<double, 2>& u) {
    return r.a[0] * u[0] + r.a[1] * u[1] + r.c;
}

bool primal_feasible(const QPProblem& p, const std::array<double, 2>& u) {
    for (const auto& r : p.rows)
        if (residual(r, u) < -kFeasTol) return false;
    return true;
}

}  // namespace

qp_infeasible::qp_infeasible(int row, double violation)
    : std::runtime_error("QP infeasible; most violated row " +
                         std::to_string(row)),
      worst_row(row),
      worst_violation(violation) {}

SolveResult try_solve(const QPProblem& p) {
    const int n = static_cast<int>(p.rows.size());
    SolveResult res;
    res.sol.duals.assign(n, 0.0);

    auto finish = [&](const std::array<double, 2>& u) {
        res.feasible = true;
        res.sol.y_hat = u;
        res.sol.active_set.clear();
        for (int j = 0; j < n; ++j)
            if (std::fabs(residual(p.rows[j], u)) <= kFeasTol ||
                res.sol.duals[j] > 0.0)
                res.sol.active_set.push_back(j);
    };

    // Empty active set: the reference itself.
    if (primal_feasible(p, p.y)) {
        finish(p.y);
        return res;
    }

    // Single active row: projection onto a halfspace boundary.
    for (int j = 0; j < n; ++j) {
        const auto& r = p.rows[j];
        double nn = r.a[0] * r.a[0] + r.a[1] * r.a[1];
        if (nn <= kDegenerateTol) continue;
        double lam = -2.0 * residual(r, p.y) / nn;
        if (lam < 0.0) continue;  // row would be slack at the projection
        std::array<double, 2> u{p.y[0] + 0.5 * lam * r.a[0],
                                p.y[1] + 0.5 * lam * r.a[1]};
        if (!primal_feasible(p, u)) continue;
        std::fill(res.sol.duals.begin(), res.sol.duals.end(), 0.0);
        res.sol.duals[j] = lam;
        finish(u);
        return res;
    }

    // Two active rows: vertex of two boundaries, lambda = -2 (A A^T)^-1 r.
    for (int j = 0; j < n; ++j) {
        for (int k = j + 1; k < n; ++k) {
            const auto& rj = p.rows[j];
            const auto& rk = p.rows[k];
            double g11 = rj.a[0] * rj.a[0] + rj.a[1] * rj.a[1];
            double g12 = rj.a[0] * rk.a[0] + rj.a[1] * rk.a[1];
            double g22 = rk.a[0] * rk.a[0] + rk.a[1] * rk.a[1];
            double det = g11 * g22 - g12 * g12;
            if (std::fabs(det) <= kDegenerateTol * std::max(1.0, g11 * g22))
                continue;
            double rj0 = residual(rj, p.y);
            double rk0 = residual(rk, p.y);
            double lj = -2.0 * (g22 * rj0 - g12 * rk0) / det;
            double lk = -2.0 * (-g12 * rj0 + g11 * rk0) / det;
            if (lj < 0.0 || lk < 0.0) continue;
            std::array<double, 2> u{
                p.y[0] + 0.5 * (lj * rj.a[0] + lk * rk.a[0]),
                p.y[1] + 0.5 * (lj * rj.a[1] + lk * rk.a[1])};
            if (!primal_feasible(p, u)) continue;
            std::fill(res.sol.duals.begin(), res.sol.duals.end(), 0.0);
            res.sol.duals[j] = lj;
            res.sol.duals[k] = lk;
            finish(u);
            return res;
        }
    }

    res.feasible = false;
    res.worst_row = -1;
    res.worst_violation = 0.0;
    for (int j = 0; j < n; ++j) {
        double v = -residual(p.rows[j], p.y);
        if (v > res.worst_violation) {
            res.worst_violation = v;
            res.worst_row = j;
        }
    }
    return res;
}

QPSolution solve(const QPProblem& p) {
    SolveResult r = try_solve(p);
    if (!r.feasible) throw qp_infeasible(r.worst_row, r.worst_violation);
    return std::move(r.sol);
}

QPGradients backward(const QPProblem& p, const QPSolution& sol,
                     const std::array<double, 2>& upstream) {
    const int n = static_cast<int>(p.rows.size());
    QPGradients g;
    g.d_a.assign(n, {0.0, 0.0});
    g.d_c.assign(n, 0.0);

    std::vector<int> act;
    for (int j = 0; j < n; ++j)
        if (sol.duals[j] > kDegenerateTol) act.push_back(j);

    // Adjoint of the KKT system: 2w + A^T v = upstream, A w = 0. Then
    // d_y = 2w, d_c_j = -v_j, d_a_j = lambda_j w - v_j uhat.
    std::array<double, 2> w{0.0, 0.0};
    std::vector<double> v(act.size(), 0.0);
    if (act.empty()) {
        w = {0.5 * upstream[0], 0.5 * upstream[1]};
    } else if (act.size() == 1) {
        const auto& a = p.rows[act[0]].a;
        double nn = a[0] * a[0] + a[1] * a[1];
        if (nn <= kDegenerateTol)
            throw std::runtime_error("degenerate active set in QP backward");
        v[0] = (a[0] * upstream[0] + a[1] * upstream[1]) / nn;
        w = {0.5 * (upstream[0] - a[0] * v[0]),
             0.5 * (upstream[1] - a[1] * v[0])};
    } else if (act.size() == 2) {
        const auto& a0 = p.rows[act[0]].a;
        const auto& a1 = p.rows[act[1]].a;
        double g11 = a0[0] * a0[0] + a0[1] * a0[1];
        double g12 = a0[0] * a1[0] + a0[1] * a1[1];
        double g22 = a1[0] * a1[0] + a1[1] * a1[1];
        double det = g11 * g22 - g12 * g12;
        if (std::fabs(det) <= kDegenerateTol * std::max(1.0, g11 * g22))
            throw std::runtime_error("degenerate active set in QP backward");
        double r0 = a0[0] * upstream[0] + a0[1] * upstream[1];
        double r1 = a1[0] * upstream[0] + a1[1] * upstream[1];
        v[0] = (g22 * r0 - g12 * r1) / det;
        v[1] = (-g12 * r0 + g11 * r1) / det;
        w = {0.0, 0.0};  // two independent rows pin uhat in R^2
    } else {
        throw std::runtime_error("more than q active rows in QP backward");
    }

    g.d_y = {2.0 * w[0], 2.0 * w[1]};
    for (size_t i = 0; i < act.size(); ++i) {
        int j = act[i];
        double lam = sol.duals[j];
        g.d_c[j] = -v[i];
        g.d_a[j] = {lam * w[0] - v[i] * sol.y_hat[0],
                    lam * w[1] - v[i] * sol.y_hat[1]};
    }
    return g;
}

std::vector<SolveResult> solve_batch(const std::vector<QPProblem>& ps,
                                     int threads) {
    std::vector<SolveResult> out(ps.size());
    parallel_for(
        static_cast<int>(ps.size()), [&](int i) { out[i] = try_solve(ps[i]); },
        threads);
    return out;
}

}  // namespace safeode::diffqp
