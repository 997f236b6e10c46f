#pragma once

// Offline labeling oracle: direct single-shooting NMPC over the control
// sequence, solved by projected gradient descent with Barzilai-Borwein steps,
// Armijo backtracking, and a quadratic penalty on the safety margin. Restarts
// escalate the penalty weight until the rolled-out knots clear the margin.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "safeode/config.hpp"
#include "safeode/hocbf.hpp"
#include "safeode/simworld.hpp"
#include "safeode/types.hpp"

namespace safeode::expert {

struct NMPCConfig {
    int horizon = 20;
    double dt = 0.1;
    double w_u1 = 10.0;  // control effort weights
    double w_u2 = 1.0;
    double terminal_p0 = 10.0;
    double wx = 0.25, wy = 1.0, wtheta = 2.0, wv = 1.0;
    double desired_speed = 10.0;
    double desired_y = 0.0;
    ControlBounds bounds;
    hocbf::ObstacleDisk obstacle;  // position at the solve instant
    double obstacle_vx = 6.0;      // predicted constant drift over the horizon
    double safety_eps = 0.1;
    double penalty_mu = 500.0;
    double pg_tol = 1e-4;
    int max_iters = 400;
    int restarts = 5;
    double wheelbase = 2.0;
};

NMPCConfig nmpc_from(const RunConfig& cfg);

struct NMPCResult {
    bool feasible = false;
    std::vector<ControlPair> u;       // length horizon, inside bounds
    double cost = 0.0;                // penalized cost at the returned point
    int iterations = 0;               // accepted iterations, all restarts
    std::vector<double> cost_trace;   // accepted costs of the returned restart
};

// Label solve from s0. rng drives only the restart perturbations; a warm
// start (typically the previous solution shifted by one knot) is tried first.
NMPCResult nmpc_solve(const VehicleState& s0, const NMPCConfig& cfg,
                      std::mt19937_64& rng,
                      const std::vector<ControlPair>* warm_start = nullptr);

// Penalized cost of a given control sequence (optimizer objective; exposed
// for trace and gradient tests).
double nmpc_cost(const VehicleState& s0, const std::vector<ControlPair>& u,
                 const NMPCConfig& cfg, double mu);

// Plant propagation: RK4 substeps of size <= h under constant u.
VehicleState plant_step(const VehicleState& s, const ControlPair& u, double dt,
                        double h, double wheelbase);

// Receding-horizon NMPC driving a scenario; the privileged baseline for the
// evaluation report (it sees the true obstacle, not the lidar).
simworld::RolloutResult rollout_nmpc(const simworld::Scenario& sc,
                                     const RunConfig& cfg, std::uint64_t seed,
                                     std::uint64_t stream);

struct GenSummary {
    int n_trajs = 0;
    int rows = 0;
    int failures = 0;  // discarded initial states
    std::string manifest_path;
};

// Builds the imitation dataset: manifest.json plus one CSV per trajectory
// with columns step,t,x,y,theta,v,u1,u2,lidar_0..99,ustar1,ustar2. The u
// columns hold the control in effect when the sample was taken (the previous
// label; the first row carries its own label, since no interval precedes
// it). Byte-identical across runs for a fixed seed/config.
GenSummary gen_dataset(const RunConfig& cfg, std::uint64_t seed,
                       const std::string& out_dir, int threads = 0);

}  // namespace safeode::expert
