#pragma once

// Projection QP for the safety layer and its derivatives.
//
//   min ||uhat - y||^2  s.t.  a_j . uhat + c_j >= 0  for each row j
//
// Decision dimension is fixed at q = 2 with at most a handful of rows
// (1 safety + 4 bounds), so the solver enumerates candidate active sets in
// ascending size and lexicographic order and returns the first KKT point.
// Strict convexity makes that point the unique optimum, and the ordering
// makes ties at degenerate vertices break toward lower row indices.

#include <array>
#include <stdexcept>
#include <vector>

#include "safeode/hocbf.hpp"

namespace safeode::diffqp {

using hocbf::LinearRow;

struct QPProblem {
    std::array<double, 2> y{0.0, 0.0};
    std::vector<LinearRow> rows;
};

struct QPSolution {
    std::array<double, 2> y_hat{0.0, 0.0};
    std::vector<double> duals;      // one per row, zero when inactive
    std::vector<int> active_set;    // row indices with zero residual
};

struct SolveResult {
    bool feasible = false;
    QPSolution sol;
    int worst_row = -1;         // most violated row at y when infeasible
    double worst_violation = 0.0;
};

struct QPGradients {
    std::array<double, 2> d_y{0.0, 0.0};
    std::vector<std::array<double, 2>> d_a;
    std::vector<double> d_c;
};

class qp_infeasible : public std::runtime_error {
  public:
    qp_infeasible(int row, double violation);
    int worst_row;
    double worst_violation;
};

inline constexpr double kFeasTol = 1e-8;
inline constexpr double kDegenerateTol = 1e-10;

SolveResult try_solve(const QPProblem& p);
QPSolution solve(const QPProblem& p);  // throws qp_infeasible

// Implicit differentiation of the KKT conditions at the solution. Rows with
// lambda_j below kDegenerateTol are treated as inactive (a subgradient
// choice at weakly active constraints); their gradient entries are exactly
// zero.
QPGradients backward(const QPProblem& p, const QPSolution& sol,
                     const std::array<double, 2>& upstream);

std::vector<SolveResult> solve_batch(const std::vector<QPProblem>& ps,
                                     int threads = 0);

}  // namespace safeode::diffqp
