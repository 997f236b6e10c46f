#pragma once

// Imitation pipeline: dataset loading, two-stage or joint training of the
// synthesized controller, open-loop validation against recorded labels, and
// the closed-loop evaluation driver.
//
// Training minimizes the mean squared control-matching error. In two-stage
// mode the network is first regressed on finite-difference control-rate
// targets with the safety filter out of the loop; the barrier gains and the
// penalty scale are then unfrozen and training continues through the filter
// on sequence rollouts. In joint mode everything trains on the sequence loss
// from the start.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safeode/checkpoint.hpp"
#include "safeode/config.hpp"
#include "safeode/odeint.hpp"
#include "safeode/simworld.hpp"
#include "safeode/types.hpp"

namespace safeode::pipeline {

struct Sample {
    int step = 0;
    double t = 0.0;
    VehicleState state;
    std::vector<double> lidar;  // raw ranges, one per ray
    ControlPair u_ctx;          // control in effect when the sample was taken
    ControlPair label;          // expert control applied over [t, t + dt)
};

struct TrajectoryData {
    simworld::Scenario scenario;
    std::vector<Sample> samples;
};

struct Dataset {
    std::vector<TrajectoryData> trajs;
    int val_index = -1;  // held-out trajectory
    std::uint64_t seed = 0;
    nlohmann::ordered_json manifest;  // parsed manifest, echoed into outputs
};

// Reads manifest.json plus every trajectory CSV. Throws on missing files,
// malformed rows, or a ray count that disagrees with the manifest config.
Dataset load_dataset(const std::string& dir);

struct EpochStat {
    int epoch = 0;  // global epoch index, 0-based
    int stage = 0;  // 0 = joint, 1 = rate regression, 2 = filter unfrozen
    double train_loss = 0.0;
    double val_loss = 0.0;
    long skipped = 0;  // sequence elements dropped (stage QP infeasible)
    long total = 0;    // sequence elements attempted
};

struct TrainResult {
    ModelCheckpoint ckpt;
    std::vector<EpochStat> curve;
    bool aborted = false;       // divergent loss; ckpt is the last good state
    bool skip_flagged = false;  // aggregate training skip rate >= 5%
    long skipped = 0;
    long total = 0;
};

// Deterministic for a fixed (dataset, cfg, two_stage, seed) regardless of
// thread count: batches are drawn from seed-derived streams and gradient
// reductions run in element order.
TrainResult train(const Dataset& data, const RunConfig& cfg, bool two_stage,
                  std::uint64_t seed, int threads = 0);

// Columns: epoch,stage,train_loss,val_loss,skipped,total
std::string loss_curve_csv(const TrainResult& r);

struct OpenLoopReport {
    long n = 0;        // rows evaluated
    long skipped = 0;  // rows where the stage QP was infeasible
    double rmse_u1 = 0.0;
    double rmse_u2 = 0.0;
    std::string csv;  // traj,step,t,pred_u1,pred_u2,label_u1,label_u2
};

// One fixed step per recorded row from (state, u_ctx) under the held scan;
// the integrated control is compared against the row's label.
OpenLoopReport eval_open(const ModelCheckpoint& ckpt, const Dataset& data,
                         const RunConfig& cfg, int threads = 0);

struct ClosedLoopOptions {
    int n_scenarios = 100;
    double noise = 0.4;  // lidar noise fraction
    odeint::Method method = odeint::Method::dopri5;
    std::uint64_t seed = 0;
    // Any subset of {"synthesized", "raw", "nmpc"}: the filtered model, the
    // unfiltered network rate, and the labeling expert run receding-horizon.
    std::vector<std::string> policies{"synthesized", "raw", "nmpc"};
    std::string traj_dir;  // when set, scenario-0 rollouts are dumped here
};

// Shared scenarios across policies; per-(policy, scenario) noise streams.
simworld::EvalReport eval_closed(const ModelCheckpoint& ckpt,
                                 const RunConfig& cfg,
                                 const ClosedLoopOptions& opt,
                                 int threads = 0);

}  // namespace safeode::pipeline
