#pragma once

// Highway overtaking world: rectangle footprints, the disk covering the
// preceding vehicle, a planar lidar, scenario sampling, closed-loop rollouts,
// and the evaluation report. Policies are injected as callables so the NMPC
// expert and the synthesized model plug in without this module knowing them.

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "safeode/config.hpp"
#include "safeode/hocbf.hpp"
#include "safeode/model.hpp"
#include "safeode/types.hpp"

namespace safeode::simworld {

struct RectPose {
    double cx = 0.0;
    double cy = 0.0;
    double heading = 0.0;
    double half_len = 2.25;
    double half_wid = 1.0;
};

std::array<std::array<double, 2>, 4> rect_corners(const RectPose& r);
bool rects_overlap(const RectPose& a, const RectPose& b);
// Euclidean separation; exactly 0 when the rectangles touch or overlap.
double rect_distance(const RectPose& a, const RectPose& b);

struct LidarConfig {
    int n_rays = 100;
    double max_range = 50.0;
    double noise_frac = 0.0;  // multiplicative, uniform in [1-f, 1+f]
};

// Ray i leaves the ego center at bearing theta + 2*pi*i/n_rays. Ranges are
// clamped to [0, max_range]; rng is consumed only when noise_frac > 0.
std::vector<double> lidar_scan(const VehicleState& ego, const RectPose& target,
                               const LidarConfig& cfg, std::mt19937_64* rng);

struct Scenario {
    VehicleState ego0;
    double preceding_x0 = 0.0;
    double preceding_y0 = 0.0;
    double preceding_speed = 6.0;
    hocbf::ObstacleDisk disk;  // covering disk at t = 0
    double duration = 10.0;
};

nlohmann::ordered_json scenario_to_json(const Scenario& sc);
Scenario scenario_from_json(const nlohmann::json& j);

RectPose preceding_rect(const Scenario& sc, double t, const RunConfig& cfg);

// Draws until the start satisfies b >= b0_margin and psi_1, psi_2 >=
// psi_margin at u = 0 under the given barrier parameters, so the invariance
// precondition holds at t = 0.
Scenario sample_scenario(const RunConfig& cfg, const std::array<double, 3>& gains,
                         double theta_p, std::mt19937_64& rng);

struct RolloutMetrics {
    double min_b = 0.0;
    double min_margin = 0.0;  // min distance from ego center to disk hull
    bool truncated = false;
    std::string failure;
    double t_end = 0.0;
    long control_evals = 0;
    double control_seconds = 0.0;  // wall time; never in deterministic files
};

struct RolloutResult {
    std::vector<model::TrajRow> rows;
    RolloutMetrics metrics;
};

// Closed-loop run of the checkpoint policy over one scenario. noise_stream
// seeds the per-rollout lidar noise; the scan refresh cadence and solver come
// from cfg/method.
RolloutResult rollout_model(const ModelCheckpoint& ckpt, const Scenario& sc,
                            const RunConfig& cfg, odeint::Method method,
                            double noise_frac, std::uint64_t seed,
                            std::uint64_t noise_stream,
                            model::RateFilter filter);

using PolicyFn =
    std::function<RolloutResult(const Scenario& sc, std::uint64_t noise_stream)>;

struct NamedPolicy {
    std::string name;
    PolicyFn run;
};

struct ScenarioOutcome {
    int scenario = 0;
    std::string policy;
    RolloutMetrics metrics;
};

struct PolicyAggregate {
    std::string policy;
    double safety = 0.0;       // min over scenarios of min_b
    double min_b_mean = 0.0;   // conservativeness in barrier units
    double min_b_std = 0.0;
    double margin_mean = 0.0;  // conservativeness in meters
    double margin_std = 0.0;
    int truncated = 0;
};

struct PolicyTiming {
    std::string policy;
    long control_evals = 0;
    double mean_control_s = 0.0;
    double max_control_s = 0.0;
};

struct EvalReport {
    int n_scenarios = 0;
    std::uint64_t seed = 0;
    std::vector<ScenarioOutcome> outcomes;
    std::vector<PolicyAggregate> aggregates;  // empty when n_scenarios == 0
    std::vector<PolicyTiming> timings;        // wall times, sidecar only
};

// Scenarios are drawn from (seed, scenario index) streams and shared across
// policies; each (policy, scenario) rollout gets its own noise stream, so the
// report is identical no matter how the work is scheduled.
EvalReport evaluate(const std::vector<NamedPolicy>& policies, int n_scenarios,
                    const RunConfig& cfg, const std::array<double, 3>& gains,
                    double theta_p, std::uint64_t seed, int threads = 0);

nlohmann::ordered_json report_to_json(const EvalReport& r);
nlohmann::ordered_json timing_to_json(const EvalReport& r);
std::string report_to_csv(const EvalReport& r);

// Overhead view of one rollout: lane band, covering disk at snapshots, ego
// footprints along the path.
void write_overhead_svg(const std::string& path,
                        const std::vector<model::TrajRow>& rows,
                        const Scenario& sc, const RunConfig& cfg);

}  // namespace safeode::simworld
