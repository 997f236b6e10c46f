#pragma once

// Closed-loop synthesized controller. The policy network proposes a control
// rate from the held observation and the current (theta, v, u); the safety
// QP projects that rate onto the lifted barrier row plus the control-box
// rows; the projected rate drives the augmented state
// z = (x, y, theta, v, u1, u2).
//
// Two drivers share the stage computation: integrate_synthesized runs the
// generic solvers for evaluation, and TapedRollout runs fixed-step RK4 while
// recording per-stage tapes so a loss on the coarse-grid controls can be
// pulled back to the network parameters and the barrier parameters.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "safeode/checkpoint.hpp"
#include "safeode/diffqp.hpp"
#include "safeode/hocbf.hpp"
#include "safeode/neuralnet.hpp"
#include "safeode/odeint.hpp"
#include "safeode/types.hpp"

namespace safeode::model {

// Observation provider: raw (unnormalized) lidar ranges at time t from the
// given pose. Sampled once per obs_dt and held constant in between.
using ScanFn =
    std::function<std::vector<double>(double t, const VehicleState& s)>;

enum class RateFilter {
    qp,   // project the network rate onto the safety and box rows
    none  // integrate the raw network rate; the plant clamps u to its box
};

struct SynthOptions {
    odeint::SolverConfig solver;
    ControlBounds bounds;
    hocbf::ObstacleDisk obstacle;  // center position at t = 0
    double obstacle_vx = 0.0;      // constant drift of the center along x
    double wheelbase = 2.0;
    double obs_dt = 0.1;  // observation refresh period
    // Class-K gain on the control-box rows. A unit gain caps |udot| at the
    // box half-width near the centre, which is far below the rates the
    // expert labels imply; 10 leaves headroom while the box stays invariant.
    double bound_kappa = 10.0;
    RateFilter filter = RateFilter::qp;
};

struct TrajRow {
    double t = 0.0;
    double x = 0.0, y = 0.0, theta = 0.0, v = 0.0, u1 = 0.0, u2 = 0.0;
    double b = 0.0, psi1 = 0.0, psi2 = 0.0;
    int qp_active = 0;       // safety row active in the filter at this state
    double qp_time_s = 0.0;  // wall time of that QP solve (not reproducible)
};

struct SynthResult {
    odeint::Trajectory traj;   // 6-dim states at the recorded times
    std::vector<TrajRow> rows; // one per recorded time
    bool qp_infeasible = false;
    double t_end = 0.0;
    double min_b = 0.0, min_psi1 = 0.0, min_psi2 = 0.0;
    // Aggregate control-path timing; excluded from reproducible outputs.
    long control_evals = 0;
    double control_seconds = 0.0;
};

SynthResult integrate_synthesized(const ModelCheckpoint& ckpt,
                                  const VehicleState& s0, const ControlPair& u0,
                                  const ScanFn& scan, double t0, double t1,
                                  const SynthOptions& opt);

// Columns: t,x,y,theta,v,u1,u2,b,psi1,psi2,qp_active,qp_time_s
void write_trajectory_csv(const std::string& path,
                          const std::vector<TrajRow>& rows);
std::vector<TrajRow> read_trajectory_csv(const std::string& path);

struct InputNorms {
    double lidar = 1.0, theta = 1.0, v = 1.0, u1 = 1.0, u2 = 1.0;
};

inline InputNorms norms_of(const ModelCheckpoint& c) {
    return {c.norm_lidar, c.norm_theta, c.norm_v, c.norm_u1, c.norm_u2};
}

struct SynthGrads {
    std::vector<double> params;  // d loss / d flat network parameters
    std::array<double, 3> gains{0.0, 0.0, 0.0};
    double theta_p = 0.0;
};

// Fixed-step RK4 rollout with per-stage tapes. The observation held over
// coarse step k is scans[k]; every RK4 stage evaluates the network and the
// QP, so gradients flow through both on the exact discrete trajectory.
class TapedRollout {
  public:
    TapedRollout(const SynthOptions& opt, const InputNorms& norms);

    // Integrates n = scans.size() coarse steps of length dt, each split into
    // n_sub RK4 substeps. Returns false without recording when a stage QP is
    // infeasible or a stage leaves the model's domain; such samples are
    // skipped by the trainer.
    bool forward(const neuralnet::MLPParams& net,
                 const std::array<double, 3>& gains, double theta_p,
                 const VehicleState& s0, const ControlPair& u0,
                 const std::vector<std::vector<double>>& scans, double dt,
                 int n_sub);

    // States at coarse points 0..n; the loss reads the control slots (4, 5)
    // of points 1..n.
    const std::vector<std::array<double, 6>>& points() const { return z_pts_; }

    // upstream[k] = d loss / d u at coarse point k + 1.
    SynthGrads backward(const neuralnet::MLPParams& net,
                        const std::vector<std::array<double, 2>>& upstream) const;

  private:
    struct StageTape {
        std::array<double, 6> z{};
        neuralnet::Tape tape;
        diffqp::QPProblem prob;
        diffqp::QPSolution sol;
        hocbf::RowJacobian jac;
    };

    bool eval_stage(const neuralnet::MLPParams& net,
                    const std::array<double, 3>& gains, double theta_p,
                    const std::array<double, 6>& z, const double* scan, double t,
                    StageTape& st, std::array<double, 6>& dz);
    void stage_vjp(const neuralnet::MLPParams& net, const StageTape& st,
                   const std::array<double, 6>& gdz, std::array<double, 6>& gz,
                   SynthGrads& grads, std::vector<double>& gin_buf) const;

    SynthOptions opt_;
    InputNorms norms_;
    double dt_ = 0.0;
    int n_sub_ = 0;
    std::vector<std::array<double, 6>> z_pts_;
    std::vector<std::array<double, 6>> sub_z_;  // state at each substep start
    std::vector<StageTape> stages_;             // 4 per substep
};

}  // namespace safeode::model
