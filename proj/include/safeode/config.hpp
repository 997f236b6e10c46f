#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "safeode/types.hpp"

namespace safeode {

// Every tunable default in one place. All values can be overridden from a
// JSON config file and are echoed verbatim into output manifests so a run
// is fully described by its artifacts.
struct RunConfig {
    double wheelbase = 2.0;
    ControlBounds bounds;

    // Barrier stack.
    double gain_p1 = 1.0;
    double gain_p2 = 1.0;
    double gain_p3 = 1.0;
    double theta_p = 1.0;
    // Class-K gain on the control-box rate rows; see model::SynthOptions.
    double bound_kappa = 10.0;

    // Disk covering the preceding vehicle's footprint. The radius leaves
    // >= 0.05 m margin over the worst-case footprint separation bound
    // (4.5 x 2.0 rectangles, disk center offset y_off below the vehicle).
    double disk_r = 5.6;
    double disk_y_off = 1.0;
    double footprint_length = 4.5;
    double footprint_width = 2.0;

    // LiDAR.
    int lidar_rays = 100;
    double lidar_max_range = 50.0;

    // Scenario family: ego starts at the origin, preceding vehicle ahead in
    // the same lane at constant speed.
    double preceding_speed = 6.0;
    double desired_speed = 10.0;
    double scenario_duration = 10.0;
    double gap_min = 14.0;
    double gap_max = 26.0;
    double ego_v_min = 7.0;
    double ego_v_max = 10.0;
    double ego_heading_jitter = 0.08;
    double ego_y_jitter = 0.5;
    double psi_margin = 0.5;
    double b0_margin = 1.0;

    // Expert labeling.
    int nmpc_horizon = 20;
    double nmpc_dt = 0.1;
    double nmpc_w_u1 = 10.0;
    double nmpc_w_u2 = 1.0;
    // Terminal target weights. The target includes a progress point
    // x0 + H*dt*desired_speed: without it, speed is direction-free and the
    // optimizer can zero the speed error by circling or stalling sideways
    // instead of overtaking. Progress outweighs lane recentring so the
    // expert commits to passing rather than tailing the slower vehicle.
    double nmpc_terminal_p0 = 10.0;
    double nmpc_wx = 0.25;
    double nmpc_wy = 0.15;
    double nmpc_wtheta = 2.0;
    double nmpc_wv = 1.0;
    double nmpc_safety_eps = 0.1;
    double nmpc_penalty_mu = 500.0;
    double nmpc_pg_tol = 1e-4;
    int nmpc_max_iters = 400;
    int nmpc_restarts = 5;

    // Dataset.
    int data_n_init = 201;
    int data_steps = 100;
    double data_dt = 0.1;
    double data_lidar_noise = 0.0;

    // ODE solving.
    double rtol = 1e-6;
    double atol = 1e-8;
    double fixed_h = 0.01;
    int max_steps = 1000000;

    // Training.
    std::vector<int> mlp_hidden{128, 256, 64, 16};
    int epochs = 20;
    int stage1_epochs = -1;        // two-stage: -1 = half of epochs
    int train_steps_per_epoch = 0; // 0 = full sweep over sequence anchors
    int train_substeps = 1;        // RK4 substeps per sample interval
    int batch_size = 20;
    int seq_len = 10;
    double lr = 1e-3;
    double lr_decay = 1.0;  // per-epoch step-size factor; restarts per stage
    double rms_rho = 0.99;
    double rms_eps = 1e-8;

    // Input normalization (100 LiDAR ranges, theta, v, u1, u2 -> 104 wide).
    double norm_lidar = 1.0 / 50.0;
    double norm_theta = 1.0;
    double norm_v = 0.1;
    double norm_u1 = 1.0 / 0.6;
    double norm_u2 = 0.2;

    // Closed-loop evaluation.
    int eval_scenarios = 100;
    double eval_noise = 0.4;

    int threads = 0;  // 0 = decide from SAFEODE_THREADS, default 1
};

nlohmann::ordered_json config_to_json(const RunConfig& cfg);
void config_apply_overrides(RunConfig& cfg, const nlohmann::json& overrides);
RunConfig config_from_file(const std::string& path);

}  // namespace safeode
