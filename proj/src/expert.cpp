#include "safeode/expert.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "safeode/dynamics.hpp"
#include "safeode/io.hpp"
#include "safeode/rng.hpp"
#include "safeode/threading.hpp"

namespace safeode::expert {

namespace {

using Controls = std::vector<ControlPair>;

double now_minus(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

hocbf::ObstacleDisk disk_at(const hocbf::ObstacleDisk& d0, double vx, double t) {
    hocbf::ObstacleDisk d = d0;
    d.cx += vx * t;
    return d;
}

ControlPair project(const ControlPair& u, const ControlBounds& b) {
    return {std::clamp(u.u1, b.u_min.u1, b.u_max.u1),
            std::clamp(u.u2, b.u_min.u2, b.u_max.u2)};
}

void project_all(Controls& u, const ControlBounds& b) {
    for (auto& ui : u) ui = project(ui, b);
}

// States x_0..x_H under one RK4 step per knot.
std::vector<VehicleState> roll(const VehicleState& s0, const Controls& u,
                               const NMPCConfig& cfg) {
    std::vector<VehicleState> x(u.size() + 1);
    x[0] = s0;
    for (std::size_t k = 0; k < u.size(); ++k)
        x[k + 1] = dynamics::rk4_step(x[k], u[k], cfg.dt, cfg.wheelbase);
    return x;
}

// A quadratic penalty settles slightly below its activation level, so the
// penalty aims above the required margin; the undershoot then still clears
// safety_eps, which is what feasibility is checked against.
double penalty_target(const NMPCConfig& cfg) { return 1.5 * cfg.safety_eps; }

// Penalized objective split into reusable pieces. The penalty knots use the
// obstacle advected to each knot time; knot 0 is the (fixed) initial state
// and carries no penalty term.
double penalty_term(const VehicleState& s, const NMPCConfig& cfg, int k,
                    double mu) {
    double b = hocbf::barrier(s, disk_at(cfg.obstacle, cfg.obstacle_vx,
                                         k * cfg.dt));
    double d = penalty_target(cfg) - b;
    return d > 0.0 ? mu * d * d : 0.0;
}

void penalty_grad(const VehicleState& s, const NMPCConfig& cfg, int k,
                  double mu, VehicleState& gs) {
    hocbf::ObstacleDisk dk = disk_at(cfg.obstacle, cfg.obstacle_vx, k * cfg.dt);
    double b = hocbf::barrier(s, dk);
    double d = penalty_target(cfg) - b;
    if (d <= 0.0) return;
    double gb = -2.0 * mu * d;  // d/db of mu*(target-b)^2
    gs.x += gb * 2.0 * (s.x - dk.cx);
    gs.y += gb * 2.0 * (s.y - (dk.cy - dk.y_off));
}

// Terminal target: progress point x_ref = x0 + H*dt*v_des, lane centre,
// straight heading, desired speed. The progress component matters: speed is
// direction-free, so without it the optimizer can zero the speed error by
// circling or stalling sideways instead of overtaking. Heading error is
// deliberately unwrapped for the same reason: a wound-up heading pays the
// full quadratic, pricing loop maneuvers out of the solution set.
double x_ref_of(const VehicleState& s0, const NMPCConfig& cfg) {
    return s0.x + cfg.horizon * cfg.dt * cfg.desired_speed;
}

double terminal_term(const VehicleState& s, const NMPCConfig& cfg,
                     double x_ref) {
    double dx = s.x - x_ref;
    double dy = s.y - cfg.desired_y;
    double dv = s.v - cfg.desired_speed;
    return cfg.terminal_p0 *
           (cfg.wx * dx * dx + cfg.wy * dy * dy +
            cfg.wtheta * s.theta * s.theta + cfg.wv * dv * dv);
}

void terminal_grad(const VehicleState& s, const NMPCConfig& cfg, double x_ref,
                   VehicleState& gs) {
    gs.x += cfg.terminal_p0 * 2.0 * cfg.wx * (s.x - x_ref);
    gs.y += cfg.terminal_p0 * 2.0 * cfg.wy * (s.y - cfg.desired_y);
    gs.theta += cfg.terminal_p0 * 2.0 * cfg.wtheta * s.theta;
    gs.v += cfg.terminal_p0 * 2.0 * cfg.wv * (s.v - cfg.desired_speed);
}

double cost_of(const std::vector<VehicleState>& x, const Controls& u,
               const NMPCConfig& cfg, double mu) {
    double J = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k)
        J += cfg.dt * (cfg.w_u1 * u[k].u1 * u[k].u1 + cfg.w_u2 * u[k].u2 * u[k].u2);
    for (std::size_t k = 1; k < x.size(); ++k)
        J += penalty_term(x[k], cfg, static_cast<int>(k), mu);
    J += terminal_term(x.back(), cfg, x_ref_of(x.front(), cfg));
    return J;
}

// Reverse sweep through the single-shooting rollout.
double cost_and_grad(const VehicleState& s0, const Controls& u,
                     const NMPCConfig& cfg, double mu, Controls& grad) {
    auto x = roll(s0, u, cfg);
    double J = cost_of(x, u, cfg, mu);
    grad.assign(u.size(), ControlPair{});
    int H = static_cast<int>(u.size());
    VehicleState g{};  // dJ/dx_{k+1}
    terminal_grad(x[H], cfg, x_ref_of(s0, cfg), g);
    penalty_grad(x[H], cfg, H, mu, g);
    for (int k = H - 1; k >= 0; --k) {
        grad[k].u1 = 2.0 * cfg.dt * cfg.w_u1 * u[k].u1;
        grad[k].u2 = 2.0 * cfg.dt * cfg.w_u2 * u[k].u2;
        VehicleState gs{};
        dynamics::rk4_step_vjp(x[k], u[k], cfg.dt, cfg.wheelbase, g, gs,
                               grad[k]);
        if (k >= 1) penalty_grad(x[k], cfg, k, mu, gs);
        g = gs;
    }
    return J;
}

double min_slack(const VehicleState& s0, const Controls& u,
                 const NMPCConfig& cfg) {
    auto x = roll(s0, u, cfg);
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < x.size(); ++k) {
        double b = hocbf::barrier(
            x[k], disk_at(cfg.obstacle, cfg.obstacle_vx,
                          static_cast<double>(k) * cfg.dt));
        worst = std::min(worst, b - cfg.safety_eps);
    }
    return worst;
}

struct PGOut {
    Controls u;
    double cost = 0.0;
    int iterations = 0;
    std::vector<double> trace;
};

// Projected gradient descent with Barzilai-Borwein steps and Armijo
// backtracking. Armijo acceptance keeps the trace non-increasing.
PGOut solve_penalized(const VehicleState& s0, Controls u, const NMPCConfig& cfg,
                      double mu, int iter_budget) {
    project_all(u, cfg.bounds);
    PGOut out;
    Controls g;
    double J = cost_and_grad(s0, u, cfg, mu, g);
    out.trace.push_back(J);
    Controls u_prev, g_prev;
    bool have_prev = false;
    const double c1 = 1e-4;
    for (int it = 0; it < iter_budget; ++it) {
        double res = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            ControlPair p = project({u[k].u1 - g[k].u1, u[k].u2 - g[k].u2},
                                    cfg.bounds);
            res = std::max({res, std::fabs(p.u1 - u[k].u1),
                            std::fabs(p.u2 - u[k].u2)});
        }
        if (res <= cfg.pg_tol) break;

        double alpha = 1e-2;
        if (have_prev) {
            double ss = 0.0, sy = 0.0;
            for (std::size_t k = 0; k < u.size(); ++k) {
                double s1 = u[k].u1 - u_prev[k].u1, s2 = u[k].u2 - u_prev[k].u2;
                double y1 = g[k].u1 - g_prev[k].u1, y2 = g[k].u2 - g_prev[k].u2;
                ss += s1 * s1 + s2 * s2;
                sy += s1 * y1 + s2 * y2;
            }
            if (sy > 1e-18) alpha = std::clamp(ss / sy, 1e-8, 10.0);
        }

        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
            Controls v(u.size());
            double decr = 0.0;
            for (std::size_t k = 0; k < u.size(); ++k) {
                v[k] = project({u[k].u1 - alpha * g[k].u1,
                                u[k].u2 - alpha * g[k].u2},
                               cfg.bounds);
                decr += g[k].u1 * (u[k].u1 - v[k].u1) +
                        g[k].u2 * (u[k].u2 - v[k].u2);
            }
            if (decr <= 0.0) break;  // projected gradient vanished
            auto xv = roll(s0, v, cfg);
            double Jv = cost_of(xv, v, cfg, mu);
            if (Jv <= J - c1 * decr) {
                u_prev = std::move(u);
                g_prev = g;
                u = std::move(v);
                J = Jv;
                cost_and_grad(s0, u, cfg, mu, g);
                have_prev = true;
                out.trace.push_back(J);
                ++out.iterations;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;  // no descent step available
    }
    out.u = std::move(u);
    out.cost = J;
    return out;
}

// Penalty continuation: a mild penalty first, so descent settles into the
// shallow pass-by valley, then sharpen toward the target weight. Without the
// low-mu stages the penalty cliff flings iterates clear around the obstacle
// into looping solutions. The reported trace is the final stage's, which is
// the optimizer run at the returned penalty weight.
PGOut solve_with_continuation(const VehicleState& s0, const Controls& seed,
                              const NMPCConfig& cfg, double mu) {
    const double scale[3] = {1.0 / 16.0, 0.25, 1.0};
    int quarter = std::max(1, cfg.max_iters / 4);
    const int budget[3] = {quarter, quarter, std::max(1, cfg.max_iters - 2 * quarter)};
    Controls u = seed;
    int total_iters = 0;
    PGOut out;
    for (int stage = 0; stage < 3; ++stage) {
        out = solve_penalized(s0, u, cfg, mu * scale[stage], budget[stage]);
        total_iters += out.iterations;
        u = out.u;
    }
    out.u = std::move(u);
    out.iterations = total_iters;
    return out;
}

int plant_substeps(double dt, double h) {
    int n = static_cast<int>(std::llround(dt / std::max(h, 1e-12)));
    return std::max(1, n);
}

std::string traj_filename(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "traj_%03d.csv", i);
    return std::string(buf);
}

}  // namespace

NMPCConfig nmpc_from(const RunConfig& cfg) {
    NMPCConfig n;
    n.horizon = cfg.nmpc_horizon;
    n.dt = cfg.nmpc_dt;
    n.w_u1 = cfg.nmpc_w_u1;
    n.w_u2 = cfg.nmpc_w_u2;
    n.terminal_p0 = cfg.nmpc_terminal_p0;
    n.wx = cfg.nmpc_wx;
    n.wy = cfg.nmpc_wy;
    n.wtheta = cfg.nmpc_wtheta;
    n.wv = cfg.nmpc_wv;
    n.desired_speed = cfg.desired_speed;
    n.bounds = cfg.bounds;
    n.obstacle_vx = cfg.preceding_speed;
    n.safety_eps = cfg.nmpc_safety_eps;
    n.penalty_mu = cfg.nmpc_penalty_mu;
    n.pg_tol = cfg.nmpc_pg_tol;
    n.max_iters = cfg.nmpc_max_iters;
    n.restarts = cfg.nmpc_restarts;
    n.wheelbase = cfg.wheelbase;
    return n;
}

double nmpc_cost(const VehicleState& s0, const std::vector<ControlPair>& u,
                 const NMPCConfig& cfg, double mu) {
    if (static_cast<int>(u.size()) != cfg.horizon)
        throw std::invalid_argument("control sequence length != horizon");
    auto x = roll(s0, u, cfg);
    return cost_of(x, u, cfg, mu);
}

// Lane-shift primitive: proportional steering toward a lateral offset that
// clears the covering disk, simulated forward so the seed is a dynamically
// consistent maneuver. Seeding both pass sides keeps the optimizer from
// being captive to the basin the warm start happens to sit in.
Controls lane_shift_seed(const VehicleState& s0, const NMPCConfig& cfg,
                         double y_target) {
    Controls u(cfg.horizon, ControlPair{});
    double T = cfg.horizon * cfg.dt;
    VehicleState s = s0;
    for (int k = 0; k < cfg.horizon; ++k) {
        double a = std::clamp((cfg.desired_speed - s.v) / T,
                              cfg.bounds.u_min.u2, cfg.bounds.u_max.u2);
        double th_des = std::clamp(0.30 * (y_target - s.y), -0.45, 0.45);
        double steer = 1.2 * (th_des - s.theta);
        u[k] = project({steer, a}, cfg.bounds);
        s = dynamics::rk4_step(s, u[k], cfg.dt, cfg.wheelbase);
    }
    return u;
}

NMPCResult nmpc_solve(const VehicleState& s0, const NMPCConfig& cfg,
                      std::mt19937_64& rng,
                      const std::vector<ControlPair>* warm_start) {
    if (cfg.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    NMPCResult res;
    std::vector<Controls> seeds;
    if (warm_start) {
        if (static_cast<int>(warm_start->size()) != cfg.horizon)
            throw std::invalid_argument("warm start length != horizon");
        seeds.push_back(*warm_start);
    }
    seeds.emplace_back(cfg.horizon, ControlPair{});
    double clear_y = cfg.obstacle.cy - cfg.obstacle.y_off;
    seeds.push_back(lane_shift_seed(s0, cfg, clear_y + cfg.obstacle.r + 1.0));
    seeds.push_back(lane_shift_seed(s0, cfg, clear_y - cfg.obstacle.r - 1.0));

    // When coasting straight stays well clear of the obstacle over the whole
    // window, every seed collapses to the same unconstrained solution and one
    // solve suffices. Near the obstacle the seeds probe both pass sides and
    // the cheapest feasible candidate wins, so the warm start cannot trap the
    // receding-horizon chain in an expensive evasion basin.
    Controls coast(cfg.horizon, ControlPair{});
    bool constrained = min_slack(s0, coast, cfg) < 50.0;

    double mu = cfg.penalty_mu;
    Controls best = seeds.front();
    double best_slack = -std::numeric_limits<double>::infinity();
    bool have_winner = false;
    PGOut winner;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        // Deeply violating seeds (a rollout that plows through the disk) hit
        // penalty cliffs whose gradients fling the iterate into looping
        // detours; anneal those. Near-feasible seeds keep their basin only if
        // the penalty is at full strength from the start.
        double viol = -min_slack(s0, seeds[si], cfg);
        PGOut pg = viol > 5.0
                       ? solve_with_continuation(s0, seeds[si], cfg, mu)
                       : solve_penalized(s0, seeds[si], cfg, mu, cfg.max_iters);
        res.iterations += pg.iterations;
        double slack = min_slack(s0, pg.u, cfg);
        if (slack > best_slack) {
            best_slack = slack;
            best = pg.u;
        }
        bool feasible = slack >= -1e-9;
        if (feasible && (!have_winner || pg.cost < winner.cost)) {
            winner = std::move(pg);
            have_winner = true;
        }
        if (!constrained && feasible) break;
    }
    if (have_winner) {
        res.feasible = true;
        res.u = std::move(winner.u);
        res.cost = winner.cost;
        res.cost_trace = std::move(winner.trace);
        return res;
    }
    for (int attempt = 0; attempt < cfg.restarts; ++attempt) {
        // Infeasible at this penalty weight: escalate and restart from the
        // best iterate so far, jittered to escape the current basin.
        mu *= 4.0;
        std::uniform_real_distribution<double> j1(-0.1, 0.1), j2(-0.5, 0.5);
        Controls init = best;
        for (auto& ui : init)
            ui = project({ui.u1 + j1(rng), ui.u2 + j2(rng)}, cfg.bounds);
        PGOut pg = solve_with_continuation(s0, init, cfg, mu);
        res.iterations += pg.iterations;
        double slack = min_slack(s0, pg.u, cfg);
        if (slack > best_slack) {
            best_slack = slack;
            best = pg.u;
        }
        if (slack >= -1e-9) {
            res.feasible = true;
            res.u = std::move(pg.u);
            res.cost = pg.cost;
            res.cost_trace = std::move(pg.trace);
            return res;
        }
    }
    res.feasible = false;
    res.u = std::move(best);
    res.cost = cost_of(roll(s0, res.u, cfg), res.u, cfg, mu);
    return res;
}

VehicleState plant_step(const VehicleState& s, const ControlPair& u, double dt,
                        double h, double wheelbase) {
    int n = plant_substeps(dt, h);
    double he = dt / n;
    VehicleState out = s;
    for (int i = 0; i < n; ++i) out = dynamics::rk4_step(out, u, he, wheelbase);
    return out;
}

simworld::RolloutResult rollout_nmpc(const simworld::Scenario& sc,
                                     const RunConfig& cfg, std::uint64_t seed,
                                     std::uint64_t stream) {
    NMPCConfig base = nmpc_from(cfg);
    base.obstacle = sc.disk;
    base.obstacle_vx = sc.preceding_speed;
    auto rng = make_rng(seed, stream);

    hocbf::BarrierStack st;
    st.gains = {cfg.gain_p1, cfg.gain_p2, cfg.gain_p3};
    st.theta_p = cfg.theta_p;
    st.drift_vx = sc.preceding_speed;

    simworld::RolloutResult out;
    out.metrics.min_b = std::numeric_limits<double>::infinity();
    out.metrics.min_margin = std::numeric_limits<double>::infinity();

    int steps = std::max(1, static_cast<int>(std::llround(sc.duration /
                                                          cfg.data_dt)));
    int n_sub = plant_substeps(cfg.data_dt, cfg.fixed_h);
    double h = cfg.data_dt / n_sub;

    VehicleState s = sc.ego0;
    Controls warm;
    auto record = [&](double t, const VehicleState& si, const ControlPair& ui,
                      double solve_s) {
        hocbf::ObstacleDisk dk = disk_at(sc.disk, sc.preceding_speed, t);
        st.obstacle = dk;
        auto psi = hocbf::psi_chain({si, ui}, st, cfg.wheelbase);
        model::TrajRow row;
        row.t = t;
        row.x = si.x;
        row.y = si.y;
        row.theta = si.theta;
        row.v = si.v;
        row.u1 = ui.u1;
        row.u2 = ui.u2;
        row.b = psi[0];
        row.psi1 = psi[1];
        row.psi2 = psi[2];
        row.qp_active = 0;
        row.qp_time_s = solve_s;
        out.rows.push_back(row);
        out.metrics.min_b = std::min(out.metrics.min_b, psi[0]);
        double margin = std::hypot(si.x - dk.cx, si.y - (dk.cy - dk.y_off)) -
                        dk.r;
        out.metrics.min_margin = std::min(out.metrics.min_margin, margin);
        out.metrics.t_end = t;
    };

    for (int k = 0; k < steps; ++k) {
        double t = k * cfg.data_dt;
        NMPCConfig nk = base;
        nk.obstacle = disk_at(sc.disk, sc.preceding_speed, t);
        auto t0 = std::chrono::steady_clock::now();
        NMPCResult r =
            nmpc_solve(s, nk, rng, warm.empty() ? nullptr : &warm);
        double solve_s = now_minus(t0);
        out.metrics.control_evals += 1;
        out.metrics.control_seconds += solve_s;
        if (!r.feasible) {
            record(t, s, warm.empty() ? ControlPair{} : warm.front(), solve_s);
            out.metrics.truncated = true;
            out.metrics.failure = "nmpc labeling failure";
            return out;
        }
        ControlPair u = r.u.front();
        record(t, s, u, solve_s);
        for (int j = 0; j < n_sub; ++j) {
            s = dynamics::rk4_step(s, u, h, cfg.wheelbase);
            if (j + 1 < n_sub) record(t + (j + 1) * h, s, u, 0.0);
        }
        warm = std::move(r.u);
        std::copy(warm.begin() + 1, warm.end(), warm.begin());
    }
    record(steps * cfg.data_dt, s, warm.front(), 0.0);
    return out;
}

GenSummary gen_dataset(const RunConfig& cfg, std::uint64_t seed,
                       const std::string& out_dir, int threads) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const int n = cfg.data_n_init;
    const int steps = cfg.data_steps;
    if (n < 1 || steps < 1)
        throw std::invalid_argument("dataset needs n_init >= 1, steps >= 1");
    constexpr int kMaxAttempts = 64;

    NMPCConfig base = nmpc_from(cfg);
    std::array<double, 3> gains{cfg.gain_p1, cfg.gain_p2, cfg.gain_p3};
    simworld::LidarConfig lcfg;
    lcfg.n_rays = cfg.lidar_rays;
    lcfg.max_range = cfg.lidar_max_range;
    lcfg.noise_frac = cfg.data_lidar_noise;

    struct SlotOut {
        std::string csv;
        nlohmann::ordered_json scenario;
        int rows = 0;
        int failures = 0;
        std::string error;
    };
    std::vector<SlotOut> slots(n);

    auto run_slot = [&](int i) {
        SlotOut& slot = slots[i];
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            std::uint64_t stream =
                static_cast<std::uint64_t>(i) * 1024u + attempt;
            auto scn_rng = make_rng(seed, stream);
            simworld::Scenario sc =
                simworld::sample_scenario(cfg, gains, cfg.theta_p, scn_rng);
            auto solve_rng = make_rng(seed, 0x10000000ULL + stream);
            auto noise_rng = make_rng(seed, 0x20000000ULL + stream);

            std::ostringstream csv;
            csv << "step,t,x,y,theta,v,u1,u2";
            for (int r = 0; r < lcfg.n_rays; ++r) csv << ",lidar_" << r;
            csv << ",ustar1,ustar2\n";

            VehicleState s = sc.ego0;
            ControlPair u_ctx{};
            Controls warm;
            bool ok = true;
            for (int k = 0; k < steps; ++k) {
                double t = k * cfg.data_dt;
                hocbf::ObstacleDisk dk =
                    disk_at(sc.disk, sc.preceding_speed, t);
                // Dataset invariant: every recorded state is strictly safe.
                if (!(hocbf::barrier(s, dk) > 0.0)) {
                    ok = false;
                    break;
                }
                auto scan = simworld::lidar_scan(
                    s, simworld::preceding_rect(sc, t, cfg), lcfg,
                    lcfg.noise_frac > 0.0 ? &noise_rng : nullptr);
                NMPCConfig nk = base;
                nk.obstacle = dk;
                NMPCResult r = nmpc_solve(s, nk, solve_rng,
                                          warm.empty() ? nullptr : &warm);
                if (!r.feasible) {
                    ok = false;
                    break;
                }
                ControlPair label = r.u.front();
                // The recorded context is the control in effect over the
                // preceding interval. Before the first sample there is none;
                // defining it as the first command keeps the annotation free
                // of a fictitious jump from zero.
                if (k == 0) u_ctx = label;
                csv << k << ',' << fmt_double(t) << ',' << fmt_double(s.x)
                    << ',' << fmt_double(s.y) << ',' << fmt_double(s.theta)
                    << ',' << fmt_double(s.v) << ',' << fmt_double(u_ctx.u1)
                    << ',' << fmt_double(u_ctx.u2);
                for (double rng_val : scan) csv << ',' << fmt_double(rng_val);
                csv << ',' << fmt_double(label.u1) << ','
                    << fmt_double(label.u2) << '\n';
                warm = r.u;
                std::copy(warm.begin() + 1, warm.end(), warm.begin());
                s = plant_step(s, label, cfg.data_dt, cfg.fixed_h,
                               cfg.wheelbase);
                u_ctx = label;
            }
            if (ok) {
                slot.csv = csv.str();
                slot.scenario = simworld::scenario_to_json(sc);
                slot.rows = steps;
                return;
            }
            ++slot.failures;
        }
        slot.error = "no labelable scenario after " +
                     std::to_string(kMaxAttempts) + " attempts";
    };

    parallel_for(n, run_slot, threads > 0 ? threads : cfg.threads);

    GenSummary sum;
    sum.n_trajs = n;
    for (const auto& slot : slots) {
        if (!slot.error.empty()) throw std::runtime_error(slot.error);
        sum.failures += slot.failures;
        sum.rows += slot.rows;
    }
    int budget = static_cast<int>(std::floor(0.05 * n));
    if (sum.failures > budget) {
        std::ostringstream msg;
        msg << "labeling failure rate above 5%: " << sum.failures
            << " discarded initial states for " << n << " trajectories";
        throw std::runtime_error(msg.str());
    }

    nlohmann::ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = seed;
    manifest["n_init"] = n;
    manifest["steps"] = steps;
    manifest["rows"] = sum.rows;
    manifest["failures"] = sum.failures;
    manifest["val_index"] = n - 1;  // last trajectory held out for validation
    manifest["config"] = config_to_json(cfg);
    nlohmann::ordered_json trajs = nlohmann::ordered_json::array();
    for (int i = 0; i < n; ++i) {
        std::string name = traj_filename(i);
        write_text_file((fs::path(out_dir) / name).string(), slots[i].csv);
        nlohmann::ordered_json t;
        t["file"] = name;
        t["rows"] = slots[i].rows;
        t["scenario"] = slots[i].scenario;
        trajs.push_back(std::move(t));
    }
    manifest["trajectories"] = std::move(trajs);
    sum.manifest_path = (fs::path(out_dir) / "manifest.json").string();
    write_text_file(sum.manifest_path, manifest.dump(2) + "\n");
    return sum;
}

}  // namespace safeode::expert
