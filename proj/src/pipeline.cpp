#include "safeode/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>

#include "safeode/expert.hpp"
#include "safeode/io.hpp"
#include "safeode/model.hpp"
#include "safeode/neuralnet.hpp"
#include "safeode/rng.hpp"
#include "safeode/threading.hpp"

namespace safeode::pipeline {
namespace {

namespace fs = std::filesystem;

bool parse_doubles(const std::string& line, std::vector<double>& out) {
    out.clear();
    const char* p = line.c_str();
    for (;;) {
        char* end = nullptr;
        double v = std::strtod(p, &end);
        if (end == p) return false;
        out.push_back(v);
        p = end;
        if (*p == '\0' || *p == '\r') return true;
        if (*p != ',') return false;
        ++p;
    }
}

hocbf::ObstacleDisk advected(hocbf::ObstacleDisk d, double vx, double t) {
    d.cx += vx * t;
    return d;
}

// Input layout must match the runtime controller stage: scaled lidar block,
// then theta, v and the two control channels.
void scaled_input(const std::vector<double>& lidar, const VehicleState& s,
                  const ControlPair& u, const RunConfig& cfg, double* in) {
    const int n = static_cast<int>(lidar.size());
    for (int i = 0; i < n; ++i) in[i] = lidar[i] * cfg.norm_lidar;
    in[n + 0] = s.theta * cfg.norm_theta;
    in[n + 1] = s.v * cfg.norm_v;
    in[n + 2] = u.u1 * cfg.norm_u1;
    in[n + 3] = u.u2 * cfg.norm_u2;
}

model::SynthOptions seq_options(const RunConfig& cfg,
                                const simworld::Scenario& sc, double t0) {
    model::SynthOptions o;
    o.bounds = cfg.bounds;
    o.obstacle = advected(sc.disk, sc.preceding_speed, t0);
    o.obstacle_vx = sc.preceding_speed;
    o.wheelbase = cfg.wheelbase;
    o.bound_kappa = cfg.bound_kappa;
    return o;
}

// Anchor of one training sequence: coarse steps start at sample k0.
struct Anchor {
    int traj = 0;
    int k0 = 0;
};

// Non-overlapping windows of seq_len consecutive samples per trajectory.
std::vector<Anchor> anchors_of(const Dataset& ds, int seq, bool validation) {
    std::vector<Anchor> out;
    for (int ti = 0; ti < static_cast<int>(ds.trajs.size()); ++ti) {
        if ((ti == ds.val_index) != validation) continue;
        const int last = static_cast<int>(ds.trajs[ti].samples.size()) - seq;
        for (int k0 = 0; k0 <= last; k0 += seq) out.push_back({ti, k0});
    }
    return out;
}

struct PointItem {
    int traj = 0;
    int k = 0;
};

std::vector<PointItem> points_of(const Dataset& ds, bool validation) {
    std::vector<PointItem> out;
    for (int ti = 0; ti < static_cast<int>(ds.trajs.size()); ++ti) {
        if ((ti == ds.val_index) != validation) continue;
        for (int k = 0; k < static_cast<int>(ds.trajs[ti].samples.size()); ++k)
            out.push_back({ti, k});
    }
    return out;
}

struct TrainCtx {
    const Dataset* ds = nullptr;
    const RunConfig* cfg = nullptr;
    neuralnet::MLPSpec spec;
    int np = 0;              // network parameter count
    std::vector<double> w;   // [net | log gains | log theta_p]
    model::InputNorms norms;
    int threads = 0;
};

neuralnet::MLPParams net_of(const TrainCtx& c) {
    return {c.spec, std::vector<double>(c.w.begin(), c.w.begin() + c.np)};
}

std::array<double, 3> gains_of(const TrainCtx& c) {
    return {std::exp(c.w[c.np]), std::exp(c.w[c.np + 1]),
            std::exp(c.w[c.np + 2])};
}

double theta_p_of(const TrainCtx& c) { return std::exp(c.w[c.np + 3]); }

// One sequence element: taped rollout across seq_len - 1 coarse steps plus
// the per-point control residuals. loss is the per-element mean over points.
struct SeqEval {
    std::optional<model::TapedRollout> roll;
    std::vector<std::array<double, 2>> res;
    double loss = 0.0;
    bool ok = false;
};

void eval_seq(const TrainCtx& c, const neuralnet::MLPParams& net,
              const std::array<double, 3>& gains, double theta_p,
              const Anchor& a, SeqEval& out) {
    const auto& td = c.ds->trajs[a.traj];
    const int n_coarse = c.cfg->seq_len - 1;
    const Sample& s0 = td.samples[a.k0];
    out.roll.emplace(seq_options(*c.cfg, td.scenario, s0.t), c.norms);
    std::vector<std::vector<double>> scans(n_coarse);
    for (int j = 0; j < n_coarse; ++j) scans[j] = td.samples[a.k0 + j].lidar;
    out.ok = out.roll->forward(net, gains, theta_p, s0.state, s0.u_ctx, scans,
                               c.cfg->data_dt, c.cfg->train_substeps);
    if (!out.ok) return;
    const auto& pts = out.roll->points();
    out.res.resize(n_coarse);
    double L = 0.0;
    for (int j = 1; j <= n_coarse; ++j) {
        const ControlPair& tgt = td.samples[a.k0 + j - 1].label;
        const double r1 = pts[j][4] - tgt.u1;
        const double r2 = pts[j][5] - tgt.u2;
        out.res[j - 1] = {r1, r2};
        L += r1 * r1 + r2 * r2;
    }
    out.loss = L / n_coarse;
}

struct BatchOut {
    double loss = 0.0;
    int n_eff = 0;  // elements that contributed; 0 means no step was taken
};

// Sequence-loss batch: grads over the full free vector, reduced in element
// order so the result is independent of scheduling. The filter parameters
// are chained through their exponential reparameterization.
BatchOut seq_batch_grad(const TrainCtx& c, const neuralnet::MLPParams& net,
                        const std::array<double, 3>& gains, double theta_p,
                        std::span<const Anchor> batch,
                        std::vector<double>& gfull, long& skipped) {
    const int B = static_cast<int>(batch.size());
    std::vector<SeqEval> evals(B);
    parallel_for(
        B, [&](int i) { eval_seq(c, net, gains, theta_p, batch[i], evals[i]); },
        c.threads);

    BatchOut out;
    for (const auto& e : evals) out.n_eff += e.ok ? 1 : 0;
    skipped += B - out.n_eff;
    if (out.n_eff == 0) return out;

    const int n_coarse = c.cfg->seq_len - 1;
    const double us = 2.0 / (static_cast<double>(out.n_eff) * n_coarse);
    std::vector<model::SynthGrads> g(B);
    parallel_for(
        B,
        [&](int i) {
            if (!evals[i].ok) return;
            std::vector<std::array<double, 2>> up(evals[i].res.size());
            for (std::size_t j = 0; j < up.size(); ++j)
                up[j] = {us * evals[i].res[j][0], us * evals[i].res[j][1]};
            g[i] = evals[i].roll->backward(net, up);
        },
        c.threads);

    gfull.assign(c.w.size(), 0.0);
    double L = 0.0;
    for (int i = 0; i < B; ++i) {
        if (!evals[i].ok) continue;
        L += evals[i].loss;
        for (int k = 0; k < c.np; ++k) gfull[k] += g[i].params[k];
        for (int k = 0; k < 3; ++k) gfull[c.np + k] += g[i].gains[k] * gains[k];
        gfull[c.np + 3] += g[i].theta_p * theta_p;
    }
    out.loss = L / out.n_eff;
    return out;
}

// Finite-difference rate target for the interval [t_k, t_k + dt): ramp from
// the control in effect to the label the expert applied over that interval.
std::array<double, 2> rate_target(const Sample& s, double dt) {
    return {(s.label.u1 - s.u_ctx.u1) / dt, (s.label.u2 - s.u_ctx.u2) / dt};
}

// Stage-1 batch: plain network regression, no rollout and no filter.
BatchOut rate_batch_grad(const TrainCtx& c, const neuralnet::MLPParams& net,
                         std::span<const PointItem> batch,
                         std::vector<double>& gfull,
                         std::vector<std::vector<double>>& gbuf) {
    const int B = static_cast<int>(batch.size());
    const int in_w = c.spec.widths.front();
    if (static_cast<int>(gbuf.size()) < B) gbuf.resize(B);
    std::vector<double> losses(B, 0.0);
    parallel_for(
        B,
        [&](int i) {
            const Sample& s = c.ds->trajs[batch[i].traj].samples[batch[i].k];
            std::vector<double> in(in_w);
            std::array<double, 2> out{};
            neuralnet::Tape tape;
            scaled_input(s.lidar, s.state, s.u_ctx, *c.cfg, in.data());
            neuralnet::forward_taped(net, in.data(), tape, out.data());
            const auto tgt = rate_target(s, c.cfg->data_dt);
            const double r1 = out[0] - tgt[0];
            const double r2 = out[1] - tgt[1];
            losses[i] = r1 * r1 + r2 * r2;
            const std::array<double, 2> up{2.0 * r1 / B, 2.0 * r2 / B};
            gbuf[i].assign(c.np, 0.0);
            neuralnet::backward(net, tape, up.data(), gbuf[i].data(), nullptr);
        },
        c.threads);

    gfull.assign(c.w.size(), 0.0);
    double L = 0.0;
    for (int i = 0; i < B; ++i) {
        L += losses[i];
        for (int k = 0; k < c.np; ++k) gfull[k] += gbuf[i][k];
    }
    return {L / B, B};
}

double val_rate_loss(const TrainCtx& c, const neuralnet::MLPParams& net,
                     std::span<const PointItem> items) {
    if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
    const int n = static_cast<int>(items.size());
    const int in_w = c.spec.widths.front();
    std::vector<double> losses(n, 0.0);
    parallel_for(
        n,
        [&](int i) {
            const Sample& s = c.ds->trajs[items[i].traj].samples[items[i].k];
            std::vector<double> in(in_w);
            std::array<double, 2> out{};
            scaled_input(s.lidar, s.state, s.u_ctx, *c.cfg, in.data());
            neuralnet::forward(net, in.data(), out.data());
            const auto tgt = rate_target(s, c.cfg->data_dt);
            const double r1 = out[0] - tgt[0];
            const double r2 = out[1] - tgt[1];
            losses[i] = r1 * r1 + r2 * r2;
        },
        c.threads);
    double L = 0.0;
    for (double v : losses) L += v;
    return L / n;
}

double val_seq_loss(const TrainCtx& c, const neuralnet::MLPParams& net,
                    const std::array<double, 3>& gains, double theta_p,
                    std::span<const Anchor> items) {
    if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
    const int n = static_cast<int>(items.size());
    std::vector<SeqEval> evals(n);
    parallel_for(
        n, [&](int i) { eval_seq(c, net, gains, theta_p, items[i], evals[i]); },
        c.threads);
    double L = 0.0;
    int n_eff = 0;
    for (const auto& e : evals) {
        if (!e.ok) continue;
        L += e.loss;
        ++n_eff;
    }
    if (n_eff == 0) return std::numeric_limits<double>::quiet_NaN();
    return L / n_eff;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.manifest =
        nlohmann::ordered_json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
    ds.seed = ds.manifest.at("seed").get<std::uint64_t>();
    ds.val_index = ds.manifest.at("val_index").get<int>();
    const int n_rays = ds.manifest.at("config").at("lidar_rays").get<int>();
    const auto& trajs = ds.manifest.at("trajectories");
    ds.trajs.reserve(trajs.size());
    const int want = 10 + n_rays;
    std::vector<double> row;
    for (const auto& tj : trajs) {
        TrajectoryData td;
        td.scenario = simworld::scenario_from_json(tj.at("scenario"));
        const std::string path =
            (fs::path(dir) / tj.at("file").get<std::string>()).string();
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open trajectory: " + path);
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error("empty trajectory file: " + path);
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            if (!parse_doubles(line, row) ||
                static_cast<int>(row.size()) != want)
                throw std::runtime_error("malformed dataset row in " + path);
            Sample s;
            s.step = static_cast<int>(row[0]);
            s.t = row[1];
            s.state = {row[2], row[3], row[4], row[5]};
            s.u_ctx = {row[6], row[7]};
            s.lidar.assign(row.begin() + 8, row.begin() + 8 + n_rays);
            s.label = {row[8 + n_rays], row[9 + n_rays]};
            td.samples.push_back(std::move(s));
        }
        if (static_cast<int>(td.samples.size()) != tj.at("rows").get<int>())
            throw std::runtime_error("row count mismatch in " + path);
        ds.trajs.push_back(std::move(td));
    }
    if (ds.val_index < 0 || ds.val_index >= static_cast<int>(ds.trajs.size()))
        throw std::runtime_error("manifest val_index out of range");
    return ds;
}

TrainResult train(const Dataset& data, const RunConfig& cfg, bool two_stage,
                  std::uint64_t seed, int threads) {
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size < 1");
    if (cfg.seq_len < 2)
        throw std::invalid_argument("seq_len < 2: sequence loss needs at least one transition");
    if (!(cfg.gain_p1 > 0) || !(cfg.gain_p2 > 0) || !(cfg.gain_p3 > 0) ||
        !(cfg.theta_p > 0))
        throw std::invalid_argument("initial gains and theta_p must be > 0");
    const auto& dcfg = data.manifest.at("config");
    if (dcfg.at("lidar_rays").get<int>() != cfg.lidar_rays ||
        dcfg.at("data_dt").get<double>() != cfg.data_dt)
        throw std::invalid_argument(
            "config disagrees with the dataset's lidar_rays/data_dt");

    TrainCtx c;
    c.ds = &data;
    c.cfg = &cfg;
    c.spec.widths.clear();
    c.spec.widths.push_back(cfg.lidar_rays + 4);
    for (int h : cfg.mlp_hidden) c.spec.widths.push_back(h);
    c.spec.widths.push_back(2);
    c.np = neuralnet::param_count(c.spec);
    c.norms = {cfg.norm_lidar, cfg.norm_theta, cfg.norm_v, cfg.norm_u1,
               cfg.norm_u2};
    c.threads = threads;

    c.w = neuralnet::xavier_init(c.spec, seed).flat;
    c.w.push_back(std::log(cfg.gain_p1));
    c.w.push_back(std::log(cfg.gain_p2));
    c.w.push_back(std::log(cfg.gain_p3));
    c.w.push_back(std::log(cfg.theta_p));

    const auto train_pts = points_of(data, false);
    const auto val_pts = points_of(data, true);
    const auto train_anchors = anchors_of(data, cfg.seq_len, false);
    const auto val_anchors = anchors_of(data, cfg.seq_len, true);
    if (train_anchors.empty())
        throw std::invalid_argument("no trajectory is long enough for seq_len");

    // Two-stage: the first ceil(epochs / 2) epochs regress the network on
    // rate targets unless stage1_epochs pins the split explicitly.
    const int s1 = !two_stage ? 0
                   : cfg.stage1_epochs >= 0
                       ? std::min(cfg.stage1_epochs, cfg.epochs)
                       : (cfg.epochs + 1) / 2;

    neuralnet::RMSprop opt{cfg.lr, cfg.rms_rho, cfg.rms_eps, 0, {}};
    TrainResult R;
    std::vector<double> last_good = c.w;
    std::vector<double> gfull;
    std::vector<std::vector<double>> gbuf;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const int stage = !two_stage ? 0 : (epoch < s1 ? 1 : 2);
        if (two_stage && epoch == s1)
            opt = neuralnet::RMSprop{cfg.lr, cfg.rms_rho, cfg.rms_eps, 0, {}};
        opt.lr = cfg.lr * std::pow(cfg.lr_decay, stage == 2 ? epoch - s1 : epoch);

        auto rng = make_rng(seed, 1 + static_cast<std::uint64_t>(epoch));
        EpochStat st;
        st.epoch = epoch;
        st.stage = stage;
        double loss_sum = 0.0;
        long loss_n = 0;
        bool diverged = false;

        auto run_batches = [&](auto& items, auto&& step_fn) {
            std::shuffle(items.begin(), items.end(), rng);
            const int n = static_cast<int>(items.size());
            const int bs = cfg.batch_size;
            int n_batches = (n + bs - 1) / bs;
            if (cfg.train_steps_per_epoch > 0)
                n_batches = std::min(n_batches, cfg.train_steps_per_epoch);
            for (int b = 0; b < n_batches; ++b) {
                const int lo = b * bs;
                const int hi = std::min(n, lo + bs);
                BatchOut out = step_fn(std::span(items.data() + lo, hi - lo));
                st.total += hi - lo;
                if (out.n_eff == 0) continue;
                if (!std::isfinite(out.loss)) {
                    diverged = true;
                    return;
                }
                loss_sum += out.loss * out.n_eff;
                loss_n += out.n_eff;
                neuralnet::rmsprop_step(c.w, gfull, opt);
            }
        };

        if (stage == 1) {
            auto items = train_pts;
            run_batches(items, [&](std::span<const PointItem> b) {
                return rate_batch_grad(c, net_of(c), b, gfull, gbuf);
            });
        } else {
            auto items = train_anchors;
            long skipped = 0;
            run_batches(items, [&](std::span<const Anchor> b) {
                return seq_batch_grad(c, net_of(c), gains_of(c), theta_p_of(c),
                                      b, gfull, skipped);
            });
            st.skipped = skipped;
        }

        if (diverged) {
            c.w = last_good;
            R.aborted = true;
            break;
        }

        st.train_loss =
            loss_n > 0 ? loss_sum / loss_n : std::numeric_limits<double>::quiet_NaN();
        st.val_loss = stage == 1
                          ? val_rate_loss(c, net_of(c), val_pts)
                          : val_seq_loss(c, net_of(c), gains_of(c),
                                         theta_p_of(c), val_anchors);
        R.curve.push_back(st);
        // The aggregate skip rate is over sequence-loss elements only; the
        // rate regression never consults the filter and cannot skip.
        if (stage != 1) {
            R.skipped += st.skipped;
            R.total += st.total;
        }
        last_good = c.w;
    }

    R.skip_flagged = R.total > 0 && 20 * R.skipped >= R.total;

    ModelCheckpoint& k = R.ckpt;
    k.spec = c.spec;
    k.params.assign(c.w.begin(), c.w.begin() + c.np);
    k.gains = gains_of(c);
    k.theta_p = theta_p_of(c);
    k.norm_lidar = cfg.norm_lidar;
    k.norm_theta = cfg.norm_theta;
    k.norm_v = cfg.norm_v;
    k.norm_u1 = cfg.norm_u1;
    k.norm_u2 = cfg.norm_u2;
    k.seed = seed;
    k.train_config = config_to_json(cfg);
    k.train_config["two_stage"] = two_stage;
    k.train_config["train_seed"] = seed;
    return R;
}

std::string loss_curve_csv(const TrainResult& r) {
    std::ostringstream out;
    out << "epoch,stage,train_loss,val_loss,skipped,total\n";
    for (const auto& e : r.curve)
        out << e.epoch << ',' << e.stage << ',' << fmt_double(e.train_loss)
            << ',' << fmt_double(e.val_loss) << ',' << e.skipped << ','
            << e.total << '\n';
    return out.str();
}

OpenLoopReport eval_open(const ModelCheckpoint& ckpt, const Dataset& data,
                         const RunConfig& cfg, int threads) {
    const neuralnet::MLPParams net{ckpt.spec, ckpt.params};
    const model::InputNorms norms = model::norms_of(ckpt);
    const int nt = static_cast<int>(data.trajs.size());

    struct Slot {
        std::string csv;
        double se1 = 0.0, se2 = 0.0;
        long n = 0, skipped = 0;
    };
    std::vector<Slot> slots(nt);

    parallel_for(
        nt,
        [&](int ti) {
            const auto& td = data.trajs[ti];
            Slot& sl = slots[ti];
            std::ostringstream csv;
            for (const auto& s : td.samples) {
                model::TapedRollout roll(seq_options(cfg, td.scenario, s.t),
                                         norms);
                const std::vector<std::vector<double>> scans{s.lidar};
                if (!roll.forward(net, ckpt.gains, ckpt.theta_p, s.state,
                                  s.u_ctx, scans, cfg.data_dt,
                                  cfg.train_substeps)) {
                    ++sl.skipped;
                    continue;
                }
                const auto& p1 = roll.points()[1];
                const double r1 = p1[4] - s.label.u1;
                const double r2 = p1[5] - s.label.u2;
                sl.se1 += r1 * r1;
                sl.se2 += r2 * r2;
                ++sl.n;
                csv << ti << ',' << s.step << ',' << fmt_double(s.t) << ','
                    << fmt_double(p1[4]) << ',' << fmt_double(p1[5]) << ','
                    << fmt_double(s.label.u1) << ',' << fmt_double(s.label.u2)
                    << '\n';
            }
            sl.csv = csv.str();
        },
        threads);

    OpenLoopReport rep;
    rep.csv = "traj,step,t,pred_u1,pred_u2,label_u1,label_u2\n";
    double se1 = 0.0, se2 = 0.0;
    for (const auto& sl : slots) {
        rep.csv += sl.csv;
        rep.n += sl.n;
        rep.skipped += sl.skipped;
        se1 += sl.se1;
        se2 += sl.se2;
    }
    if (rep.n > 0) {
        rep.rmse_u1 = std::sqrt(se1 / rep.n);
        rep.rmse_u2 = std::sqrt(se2 / rep.n);
    }
    return rep;
}

simworld::EvalReport eval_closed(const ModelCheckpoint& ckpt,
                                 const RunConfig& cfg,
                                 const ClosedLoopOptions& opt, int threads) {
    std::vector<simworld::NamedPolicy> pols;
    for (const std::string& name : opt.policies) {
        if (name == "synthesized") {
            pols.push_back({name, [&](const simworld::Scenario& sc,
                                      std::uint64_t ns) {
                                return simworld::rollout_model(
                                    ckpt, sc, cfg, opt.method, opt.noise,
                                    opt.seed, ns, model::RateFilter::qp);
                            }});
        } else if (name == "raw") {
            pols.push_back({name, [&](const simworld::Scenario& sc,
                                      std::uint64_t ns) {
                                return simworld::rollout_model(
                                    ckpt, sc, cfg, opt.method, opt.noise,
                                    opt.seed, ns, model::RateFilter::none);
                            }});
        } else if (name == "nmpc") {
            pols.push_back({name, [&](const simworld::Scenario& sc,
                                      std::uint64_t ns) {
                                return expert::rollout_nmpc(sc, cfg, opt.seed,
                                                            ns);
                            }});
        } else {
            throw std::invalid_argument("unknown policy: " + name);
        }
    }

    auto rep = simworld::evaluate(pols, opt.n_scenarios, cfg, ckpt.gains,
                                  ckpt.theta_p, opt.seed, threads);

    if (!opt.traj_dir.empty() && opt.n_scenarios > 0) {
        fs::create_directories(opt.traj_dir);
        auto rng0 = make_rng(opt.seed, 0);
        const auto sc0 =
            simworld::sample_scenario(cfg, ckpt.gains, ckpt.theta_p, rng0);
        write_text_file((fs::path(opt.traj_dir) / "scenario0.json").string(),
                        simworld::scenario_to_json(sc0).dump(2) + "\n");
        for (std::size_t p = 0; p < pols.size(); ++p) {
            // Same noise stream evaluate() used for (policy p, scenario 0).
            const auto res = pols[p].run(sc0, (p + 1) * 1000003ULL);
            model::write_trajectory_csv(
                (fs::path(opt.traj_dir) / (pols[p].name + "_scenario0.csv"))
                    .string(),
                res.rows);
        }
    }
    return rep;
}

}  // namespace safeode::pipeline
