#include "safeode/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "safeode/io.hpp"
#include "safeode/rng.hpp"
#include "safeode/threading.hpp"

namespace safeode::simworld {
namespace {

using Vec2 = std::array<double, 2>;

double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

Vec2 sub(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }

// Closest-distance between segments p1+s(q1-p1) and p2+t(q2-p2), s,t in [0,1].
double segment_distance(const Vec2& p1, const Vec2& q1, const Vec2& p2,
                        const Vec2& q2) {
    const Vec2 d1 = sub(q1, p1), d2 = sub(q2, p2), r = sub(p1, p2);
    const double a = dot(d1, d1), e = dot(d2, d2), f = dot(d2, r);
    double s = 0.0, t = 0.0;
    if (a <= 1e-15 && e <= 1e-15) {
        // both degenerate
    } else if (a <= 1e-15) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = dot(d1, r);
        if (e <= 1e-15) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = dot(d1, d2);
            const double denom = a * e - b * b;
            if (denom > 1e-15) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    const Vec2 c1{p1[0] + s * d1[0], p1[1] + s * d1[1]};
    const Vec2 c2{p2[0] + t * d2[0], p2[1] + t * d2[1]};
    const Vec2 d = sub(c1, c2);
    return std::sqrt(dot(d, d));
}

bool separated_on_axis(const Vec2& axis,
                       const std::array<Vec2, 4>& a,
                       const std::array<Vec2, 4>& b) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = amax;
    for (const auto& p : a) {
        const double d = dot(axis, p);
        amin = std::min(amin, d);
        amax = std::max(amax, d);
    }
    for (const auto& p : b) {
        const double d = dot(axis, p);
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
    }
    return amax < bmin || bmax < amin;
}

}  // namespace

std::array<Vec2, 4> rect_corners(const RectPose& r) {
    const double c = std::cos(r.heading), s = std::sin(r.heading);
    std::array<Vec2, 4> out;
    const double lx[4] = {r.half_len, r.half_len, -r.half_len, -r.half_len};
    const double ly[4] = {r.half_wid, -r.half_wid, -r.half_wid, r.half_wid};
    for (int i = 0; i < 4; ++i)
        out[i] = {r.cx + c * lx[i] - s * ly[i], r.cy + s * lx[i] + c * ly[i]};
    return out;
}

bool rects_overlap(const RectPose& a, const RectPose& b) {
    const auto ca = rect_corners(a), cb = rect_corners(b);
    // Face normals of both rectangles are a complete separating-axis set for
    // convex polygons in the plane.
    const Vec2 axes[4] = {
        {std::cos(a.heading), std::sin(a.heading)},
        {-std::sin(a.heading), std::cos(a.heading)},
        {std::cos(b.heading), std::sin(b.heading)},
        {-std::sin(b.heading), std::cos(b.heading)},
    };
    for (const auto& ax : axes)
        if (separated_on_axis(ax, ca, cb)) return false;
    return true;
}

double rect_distance(const RectPose& a, const RectPose& b) {
    if (rects_overlap(a, b)) return 0.0;
    const auto ca = rect_corners(a), cb = rect_corners(b);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            best = std::min(best, segment_distance(ca[i], ca[(i + 1) % 4],
                                                   cb[j], cb[(j + 1) % 4]));
    return best;
}

std::vector<double> lidar_scan(const VehicleState& ego, const RectPose& target,
                               const LidarConfig& cfg, std::mt19937_64* rng) {
    if (cfg.n_rays < 1) throw std::invalid_argument("lidar: n_rays must be >= 1");
    const double c = std::cos(target.heading), s = std::sin(target.heading);
    // Ray origin in the target's local frame.
    const double rx = ego.x - target.cx, ry = ego.y - target.cy;
    const double ox = c * rx + s * ry;
    const double oy = -s * rx + c * ry;

    std::vector<double> out(cfg.n_rays, cfg.max_range);
    for (int i = 0; i < cfg.n_rays; ++i) {
        const double phi = ego.theta + 2.0 * M_PI * i / cfg.n_rays;
        const double wx = std::cos(phi), wy = std::sin(phi);
        const double dx = c * wx + s * wy;
        const double dy = -s * wx + c * wy;
        // Slab intersection with [-half_len, half_len] x [-half_wid, half_wid].
        double tmin = 0.0, tmax = cfg.max_range;
        bool hit = true;
        const double o[2] = {ox, oy}, d[2] = {dx, dy};
        const double h[2] = {target.half_len, target.half_wid};
        for (int k = 0; k < 2 && hit; ++k) {
            if (std::fabs(d[k]) < 1e-12) {
                if (std::fabs(o[k]) > h[k]) hit = false;
            } else {
                double t1 = (-h[k] - o[k]) / d[k];
                double t2 = (h[k] - o[k]) / d[k];
                if (t1 > t2) std::swap(t1, t2);
                tmin = std::max(tmin, t1);
                tmax = std::min(tmax, t2);
                if (tmin > tmax) hit = false;
            }
        }
        if (hit) out[i] = tmin;
    }
    if (cfg.noise_frac > 0.0) {
        if (rng == nullptr)
            throw std::invalid_argument("lidar: noise requested without an rng");
        std::uniform_real_distribution<double> u(-cfg.noise_frac, cfg.noise_frac);
        for (double& r : out)
            r = std::clamp(r * (1.0 + u(*rng)), 0.0, cfg.max_range);
    }
    return out;
}

nlohmann::ordered_json scenario_to_json(const Scenario& sc) {
    nlohmann::ordered_json j;
    j["ego0"] = {{"x", sc.ego0.x},
                 {"y", sc.ego0.y},
                 {"theta", sc.ego0.theta},
                 {"v", sc.ego0.v}};
    j["preceding"] = {{"x", sc.preceding_x0},
                      {"y", sc.preceding_y0},
                      {"speed", sc.preceding_speed}};
    j["disk"] = {{"cx", sc.disk.cx},
                 {"cy", sc.disk.cy},
                 {"r", sc.disk.r},
                 {"y_off", sc.disk.y_off}};
    j["duration"] = sc.duration;
    return j;
}

Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario sc;
    sc.ego0 = {j.at("ego0").at("x"), j.at("ego0").at("y"),
               j.at("ego0").at("theta"), j.at("ego0").at("v")};
    sc.preceding_x0 = j.at("preceding").at("x");
    sc.preceding_y0 = j.at("preceding").at("y");
    sc.preceding_speed = j.at("preceding").at("speed");
    sc.disk = {j.at("disk").at("cx"), j.at("disk").at("cy"),
               j.at("disk").at("r"), j.at("disk").at("y_off")};
    sc.duration = j.at("duration");
    return sc;
}

RectPose preceding_rect(const Scenario& sc, double t, const RunConfig& cfg) {
    return {sc.preceding_x0 + sc.preceding_speed * t, sc.preceding_y0, 0.0,
            cfg.footprint_length / 2.0, cfg.footprint_width / 2.0};
}

Scenario sample_scenario(const RunConfig& cfg, const std::array<double, 3>& gains,
                         double theta_p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Scenario sc;
        const double gap = uniform(cfg.gap_min, cfg.gap_max);
        const double v0 = uniform(cfg.ego_v_min, cfg.ego_v_max);
        const double heading = uniform(-cfg.ego_heading_jitter, cfg.ego_heading_jitter);
        const double y0 = uniform(-cfg.ego_y_jitter, cfg.ego_y_jitter);
        sc.ego0 = {0.0, y0, heading, v0};
        sc.preceding_x0 = gap;
        sc.preceding_y0 = 0.0;
        sc.preceding_speed = cfg.preceding_speed;
        sc.disk = {gap, 0.0, cfg.disk_r, cfg.disk_y_off};
        sc.duration = cfg.scenario_duration;

        hocbf::BarrierStack st{sc.disk, gains, theta_p, 2, sc.preceding_speed};
        const auto psi =
            hocbf::psi_chain({sc.ego0, {0.0, 0.0}}, st, cfg.wheelbase);
        if (psi[0] >= cfg.b0_margin && psi[1] >= cfg.psi_margin &&
            psi[2] >= cfg.psi_margin)
            return sc;
    }
    throw std::runtime_error(
        "sample_scenario: no start satisfied the safety margins; the barrier "
        "parameters may be too aggressive for the scenario family");
}

RolloutResult rollout_model(const ModelCheckpoint& ckpt, const Scenario& sc,
                            const RunConfig& cfg, odeint::Method method,
                            double noise_frac, std::uint64_t seed,
                            std::uint64_t noise_stream,
                            model::RateFilter filter) {
    auto rng = make_rng(seed, noise_stream);
    LidarConfig lc{cfg.lidar_rays, cfg.lidar_max_range, noise_frac};

    model::SynthOptions opt;
    opt.solver.method = method;
    opt.solver.rtol = cfg.rtol;
    opt.solver.atol = cfg.atol;
    opt.solver.h = cfg.fixed_h;
    opt.solver.max_steps = cfg.max_steps;
    opt.bounds = cfg.bounds;
    opt.obstacle = sc.disk;
    opt.obstacle_vx = sc.preceding_speed;
    opt.wheelbase = cfg.wheelbase;
    opt.obs_dt = cfg.data_dt;
    opt.bound_kappa = cfg.bound_kappa;
    opt.filter = filter;

    model::ScanFn scan = [&](double t, const VehicleState& s) {
        return lidar_scan(s, preceding_rect(sc, t, cfg), lc, &rng);
    };
    auto res = model::integrate_synthesized(ckpt, sc.ego0, {0.0, 0.0}, scan,
                                            0.0, sc.duration, opt);

    RolloutResult out;
    out.metrics.min_b = res.min_b;
    out.metrics.min_margin = std::numeric_limits<double>::infinity();
    for (const auto& row : res.rows) {
        const double cx = sc.disk.cx + sc.preceding_speed * row.t;
        const double cy = sc.disk.cy - sc.disk.y_off;
        const double d = std::hypot(row.x - cx, row.y - cy) - sc.disk.r;
        out.metrics.min_margin = std::min(out.metrics.min_margin, d);
    }
    out.metrics.truncated = res.traj.truncated;
    out.metrics.failure = res.traj.failure;
    out.metrics.t_end = res.t_end;
    out.metrics.control_evals = res.control_evals;
    out.metrics.control_seconds = res.control_seconds;
    out.rows = std::move(res.rows);
    return out;
}

EvalReport evaluate(const std::vector<NamedPolicy>& policies, int n_scenarios,
                    const RunConfig& cfg, const std::array<double, 3>& gains,
                    double theta_p, std::uint64_t seed, int threads) {
    if (n_scenarios < 0) throw std::invalid_argument("evaluate: n_scenarios < 0");
    EvalReport rep;
    rep.n_scenarios = n_scenarios;
    rep.seed = seed;
    if (n_scenarios == 0 || policies.empty()) return rep;

    std::vector<Scenario> scenarios;
    scenarios.reserve(n_scenarios);
    for (int i = 0; i < n_scenarios; ++i) {
        auto rng = make_rng(seed, static_cast<std::uint64_t>(i));
        scenarios.push_back(sample_scenario(cfg, gains, theta_p, rng));
    }

    const int n_pol = static_cast<int>(policies.size());
    rep.outcomes.resize(static_cast<std::size_t>(n_pol) * n_scenarios);
    parallel_for(n_pol * n_scenarios, [&](int flat) {
        const int p = flat / n_scenarios;
        const int i = flat % n_scenarios;
        const std::uint64_t noise_stream =
            (static_cast<std::uint64_t>(p) + 1) * 1000003ULL + i;
        auto res = policies[p].run(scenarios[i], noise_stream);
        ScenarioOutcome& o = rep.outcomes[flat];
        o.scenario = i;
        o.policy = policies[p].name;
        o.metrics = res.metrics;
    }, threads);

    for (int p = 0; p < n_pol; ++p) {
        PolicyAggregate agg;
        agg.policy = policies[p].name;
        agg.safety = std::numeric_limits<double>::infinity();
        double sb = 0, sb2 = 0, sm = 0, sm2 = 0;
        PolicyTiming tim;
        tim.policy = policies[p].name;
        for (int i = 0; i < n_scenarios; ++i) {
            const auto& m = rep.outcomes[p * n_scenarios + i].metrics;
            agg.safety = std::min(agg.safety, m.min_b);
            sb += m.min_b;
            sb2 += m.min_b * m.min_b;
            sm += m.min_margin;
            sm2 += m.min_margin * m.min_margin;
            if (m.truncated) ++agg.truncated;
            tim.control_evals += m.control_evals;
            tim.mean_control_s += m.control_seconds;
            if (m.control_evals > 0)
                tim.max_control_s = std::max(
                    tim.max_control_s, m.control_seconds / m.control_evals);
        }
        const double n = n_scenarios;
        agg.min_b_mean = sb / n;
        agg.min_b_std = std::sqrt(std::max(0.0, sb2 / n - agg.min_b_mean * agg.min_b_mean));
        agg.margin_mean = sm / n;
        agg.margin_std =
            std::sqrt(std::max(0.0, sm2 / n - agg.margin_mean * agg.margin_mean));
        rep.aggregates.push_back(agg);
        if (tim.control_evals > 0) tim.mean_control_s /= tim.control_evals;
        rep.timings.push_back(tim);
    }
    return rep;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["n_scenarios"] = r.n_scenarios;
    j["seed"] = r.seed;
    j["aggregates"] = nlohmann::ordered_json::array();
    for (const auto& a : r.aggregates) {
        j["aggregates"].push_back({{"policy", a.policy},
                                   {"safety", a.safety},
                                   {"min_b_mean", a.min_b_mean},
                                   {"min_b_std", a.min_b_std},
                                   {"margin_mean", a.margin_mean},
                                   {"margin_std", a.margin_std},
                                   {"truncated", a.truncated}});
    }
    j["outcomes"] = nlohmann::ordered_json::array();
    for (const auto& o : r.outcomes) {
        j["outcomes"].push_back({{"policy", o.policy},
                                 {"scenario", o.scenario},
                                 {"min_b", o.metrics.min_b},
                                 {"min_margin", o.metrics.min_margin},
                                 {"truncated", o.metrics.truncated},
                                 {"failure", o.metrics.failure},
                                 {"t_end", o.metrics.t_end},
                                 {"control_evals", o.metrics.control_evals}});
    }
    return j;
}

nlohmann::ordered_json timing_to_json(const EvalReport& r) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& t : r.timings) {
        j.push_back({{"policy", t.policy},
                     {"control_evals", t.control_evals},
                     {"mean_control_s", t.mean_control_s},
                     {"max_mean_control_s_per_rollout", t.max_control_s}});
    }
    return j;
}

std::string report_to_csv(const EvalReport& r) {
    std::ostringstream ss;
    ss << "policy,scenario,min_b,min_margin,truncated,t_end,control_evals\n";
    for (const auto& o : r.outcomes) {
        ss << o.policy << ',' << o.scenario << ',' << fmt_double(o.metrics.min_b)
           << ',' << fmt_double(o.metrics.min_margin) << ','
           << (o.metrics.truncated ? 1 : 0) << ',' << fmt_double(o.metrics.t_end)
           << ',' << o.metrics.control_evals << '\n';
    }
    return ss.str();
}

void write_overhead_svg(const std::string& path,
                        const std::vector<model::TrajRow>& rows,
                        const Scenario& sc, const RunConfig& cfg) {
    if (rows.empty()) throw std::invalid_argument("svg: empty trajectory");
    double xmin = rows.front().x, xmax = rows.front().x;
    for (const auto& row : rows) {
        xmin = std::min(xmin, row.x);
        xmax = std::max(xmax, row.x);
    }
    const double t_last = rows.back().t;
    xmax = std::max(xmax, sc.preceding_x0 + sc.preceding_speed * t_last +
                              cfg.footprint_length);
    xmin -= 5.0;
    xmax += 5.0;
    const double ymin = -10.0, ymax = 10.0;
    const double scale = 12.0;
    const double w = (xmax - xmin) * scale, h = (ymax - ymin) * scale;
    auto X = [&](double x) { return (x - xmin) * scale; };
    auto Y = [&](double y) { return (ymax - y) * scale; };

    std::ostringstream ss;
    ss << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
       << h << "' viewBox='0 0 " << w << ' ' << h << "'>\n";
    ss << "<rect width='100%' height='100%' fill='#f4f4f2'/>\n";
    ss << "<rect x='0' y='" << Y(4.0) << "' width='" << w << "' height='"
       << 8.0 * scale << "' fill='#d9dbde'/>\n";
    ss << "<line x1='0' y1='" << Y(0.0) << "' x2='" << w << "' y2='" << Y(0.0)
       << "' stroke='#ffffff' stroke-width='2' stroke-dasharray='14,10'/>\n";

    auto rect_svg = [&](const RectPose& r, const std::string& fill,
                        double opacity) {
        const auto cs = rect_corners(r);
        ss << "<polygon points='";
        for (const auto& p : cs) ss << X(p[0]) << ',' << Y(p[1]) << ' ';
        ss << "' fill='" << fill << "' fill-opacity='" << opacity
           << "' stroke='#333' stroke-width='0.8'/>\n";
    };

    // Covering disk and preceding vehicle at a few instants.
    for (double frac : {0.0, 0.5, 1.0}) {
        const double t = frac * t_last;
        const double cx = sc.disk.cx + sc.preceding_speed * t;
        ss << "<circle cx='" << X(cx) << "' cy='" << Y(sc.disk.cy - sc.disk.y_off)
           << "' r='" << sc.disk.r * scale
           << "' fill='none' stroke='#c0392b' stroke-width='1' stroke-dasharray='4,4'/>\n";
        rect_svg(preceding_rect(sc, t, cfg), "#c0392b", 0.25 + 0.25 * frac);
    }

    ss << "<polyline fill='none' stroke='#2563eb' stroke-width='2' points='";
    for (const auto& row : rows) ss << X(row.x) << ',' << Y(row.y) << ' ';
    ss << "'/>\n";
    const double stride = std::max(1.0, t_last / 5.0);
    double next_t = 0.0;
    for (const auto& row : rows) {
        if (row.t + 1e-9 >= next_t) {
            rect_svg({row.x, row.y, row.theta, cfg.footprint_length / 2.0,
                      cfg.footprint_width / 2.0},
                     "#2563eb", 0.30);
            next_t += stride;
        }
    }
    ss << "</svg>\n";
    write_text_file(path, ss.str());
}

}  // namespace safeode::simworld
