// Command-line driver: dataset generation, training, open- and closed-loop
// evaluation, and SVG plotting. Every tunable lives in RunConfig; a JSON
// config file overrides the defaults and explicit flags override the file.
// Deterministic outputs echo the resolved configuration; wall-clock timing
// goes to a separate sidecar so the main artifacts stay byte-reproducible.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "safeode/checkpoint.hpp"
#include "safeode/config.hpp"
#include "safeode/expert.hpp"
#include "safeode/io.hpp"
#include "safeode/model.hpp"
#include "safeode/odeint.hpp"
#include "safeode/pipeline.hpp"
#include "safeode/simworld.hpp"

namespace {

using namespace safeode;
namespace fs = std::filesystem;

struct CommonOpts {
    std::string config_path;
    int threads = -1;  // -1: keep the config value
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path,
                    "JSON config file; flags override its values");
    cmd->add_option("--threads", c.threads, "worker threads (0 = env/default)");
}

// defaults < config file < explicit flags.
RunConfig resolve_config(const CommonOpts& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) cfg = config_from_file(c.config_path);
    if (c.threads >= 0) cfg.threads = c.threads;
    return cfg;
}

int run_gen(const CommonOpts& common, const CLI::App* cmd, int n_init,
            int steps, double dt, std::uint64_t seed, const std::string& out) {
    RunConfig cfg = resolve_config(common);
    if (cmd->count("--n-init")) cfg.data_n_init = n_init;
    if (cmd->count("--steps")) cfg.data_steps = steps;
    if (cmd->count("--dt")) cfg.data_dt = dt;
    auto sum = expert::gen_dataset(cfg, seed, out, cfg.threads);
    std::printf("wrote %d trajectories x %d rows to %s (%d discarded starts)\n",
                sum.n_trajs, sum.rows / std::max(sum.n_trajs, 1), out.c_str(),
                sum.failures);
    return 0;
}

int run_train(const CommonOpts& common, const CLI::App* cmd,
              const std::string& data, int epochs, int batch, int seq,
              double lr, bool two_stage, std::uint64_t seed,
              const std::string& out) {
    RunConfig cfg = resolve_config(common);
    if (cmd->count("--epochs")) cfg.epochs = epochs;
    if (cmd->count("--batch")) cfg.batch_size = batch;
    if (cmd->count("--seq")) cfg.seq_len = seq;
    if (cmd->count("--lr")) cfg.lr = lr;

    auto ds = pipeline::load_dataset(data);
    auto r = pipeline::train(ds, cfg, two_stage, seed, cfg.threads);
    save_checkpoint(out, r.ckpt);
    write_text_file(out + ".loss.csv", pipeline::loss_curve_csv(r));

    if (!r.curve.empty()) {
        const auto& last = r.curve.back();
        std::printf("epoch %d: train %.6g val %.6g\n", last.epoch,
                    last.train_loss, last.val_loss);
    }
    if (r.aborted)
        std::printf("warning: training aborted on a divergent loss; the "
                    "checkpoint holds the last finite state\n");
    if (r.skip_flagged)
        std::printf("warning: %ld of %ld sequence elements were skipped "
                    "(stage QP infeasible)\n", r.skipped, r.total);
    std::printf("checkpoint %s, curve %s.loss.csv\n", out.c_str(), out.c_str());
    return 0;
}

int run_eval_open(const CommonOpts& common, const std::string& ckpt_path,
                  const std::string& data, const std::string& out) {
    RunConfig cfg = resolve_config(common);
    auto ckpt = load_checkpoint(ckpt_path);
    auto ds = pipeline::load_dataset(data);
    auto rep = pipeline::eval_open(ckpt, ds, cfg, cfg.threads);
    write_text_file(out, rep.csv);

    nlohmann::ordered_json j;
    j["rows"] = rep.n;
    j["skipped"] = rep.skipped;
    j["rmse_u1"] = rep.rmse_u1;
    j["rmse_u2"] = rep.rmse_u2;
    j["config"] = config_to_json(cfg);
    write_text_file(out + ".summary.json", j.dump(2) + "\n");
    std::printf("%ld rows (%ld skipped): rmse u1 %.6g, u2 %.6g\n", rep.n,
                rep.skipped, rep.rmse_u1, rep.rmse_u2);
    return 0;
}

int run_eval_closed(const CommonOpts& common, const CLI::App* cmd,
                    const std::string& ckpt_path, int scenarios, double noise,
                    const std::string& solver, std::uint64_t seed,
                    const std::string& out,
                    const std::vector<std::string>& policies,
                    const std::string& traj_dir) {
    RunConfig cfg = resolve_config(common);
    if (cmd->count("--scenarios")) cfg.eval_scenarios = scenarios;
    if (cmd->count("--noise")) cfg.eval_noise = noise;

    pipeline::ClosedLoopOptions opt;
    opt.n_scenarios = cfg.eval_scenarios;
    opt.noise = cfg.eval_noise;
    opt.method = solver == "fixed-adams" ? odeint::Method::fixed_adams
                                         : odeint::Method::dopri5;
    opt.seed = seed;
    if (!policies.empty()) opt.policies = policies;
    opt.traj_dir = traj_dir;

    auto ckpt = load_checkpoint(ckpt_path);
    auto rep = pipeline::eval_closed(ckpt, cfg, opt, cfg.threads);

    nlohmann::ordered_json j = simworld::report_to_json(rep);
    j["solver"] = solver;
    j["noise"] = opt.noise;
    j["config"] = config_to_json(cfg);
    write_text_file(out, j.dump(2) + "\n");
    // Wall times are not reproducible; they never enter the main report.
    write_text_file(out + ".timing.json",
                    simworld::timing_to_json(rep).dump(2) + "\n");

    for (const auto& a : rep.aggregates)
        std::printf("%-12s safety %9.4f  mean min-b %8.4f  margin %7.3f m  "
                    "truncated %d\n", a.policy.c_str(), a.safety, a.min_b_mean,
                    a.margin_mean, a.truncated);
    std::printf("report %s, timing sidecar %s.timing.json\n", out.c_str(),
                out.c_str());
    return 0;
}

int run_plot(const std::string& traj, const std::string& scenario_path,
             const std::string& out, const CommonOpts& common) {
    RunConfig cfg = resolve_config(common);
    auto rows = model::read_trajectory_csv(traj);
    std::string sc_path = scenario_path;
    if (sc_path.empty())
        sc_path = (fs::path(traj).parent_path() / "scenario0.json").string();
    auto sc = simworld::scenario_from_json(
        nlohmann::json::parse(read_text_file(sc_path)));
    simworld::write_overhead_svg(out, rows, sc, cfg);
    std::printf("wrote %s (%zu rows)\n", out.c_str(), rows.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neural-ODE driving policy with a differentiable safety "
                 "filter: data generation, training, evaluation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "label scenarios with the "
                                               "receding-horizon expert");
    CommonOpts gen_common;
    int n_init = 201, steps = 100;
    double dt = 0.1;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n-init", n_init, "number of initial states")
        ->capture_default_str();
    gen->add_option("--steps", steps, "samples per trajectory")
        ->capture_default_str();
    gen->add_option("--dt", dt, "sampling interval [s]")->capture_default_str();
    gen->add_option("--seed", gen_seed, "RNG seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->required();
    add_common(gen, gen_common);

    // train
    auto* train = app.add_subcommand("train", "fit the policy to a dataset");
    CommonOpts train_common;
    std::string train_data, train_out;
    int epochs = 20, batch = 20, seq = 10;
    double lr = 1e-3;
    bool two_stage = false;
    std::uint64_t train_seed = 0;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--epochs", epochs, "training epochs")
        ->capture_default_str();
    train->add_option("--batch", batch, "sequences per batch")
        ->capture_default_str();
    train->add_option("--seq", seq, "samples per training sequence")
        ->capture_default_str();
    train->add_option("--lr", lr, "RMSprop step size")->capture_default_str();
    train->add_flag("--two-stage", two_stage,
                    "rate regression first, then unfreeze the filter");
    train->add_option("--seed", train_seed, "RNG seed")->capture_default_str();
    train->add_option("--out", train_out, "checkpoint path")->required();
    add_common(train, train_common);

    // eval-open
    auto* eopen = app.add_subcommand("eval-open", "one-step predictions "
                                                  "against recorded labels");
    CommonOpts eopen_common;
    std::string eopen_ckpt, eopen_data, eopen_out;
    eopen->add_option("--ckpt", eopen_ckpt, "checkpoint path")->required();
    eopen->add_option("--data", eopen_data, "dataset directory")->required();
    eopen->add_option("--out", eopen_out, "per-sample CSV path")->required();
    add_common(eopen, eopen_common);

    // eval-closed
    auto* eclosed = app.add_subcommand("eval-closed", "closed-loop rollouts "
                                                      "over fresh scenarios");
    CommonOpts eclosed_common;
    std::string eclosed_ckpt, eclosed_out, solver = "dopri5", traj_dir;
    std::vector<std::string> policies;
    int scenarios = 100;
    double noise = 0.4;
    std::uint64_t eclosed_seed = 0;
    eclosed->add_option("--ckpt", eclosed_ckpt, "checkpoint path")->required();
    eclosed->add_option("--scenarios", scenarios, "number of scenarios")
        ->capture_default_str();
    eclosed->add_option("--noise", noise, "lidar noise fraction")
        ->capture_default_str();
    eclosed->add_option("--solver", solver, "integrator")
        ->check(CLI::IsMember({"dopri5", "fixed-adams"}))
        ->capture_default_str();
    eclosed->add_option("--seed", eclosed_seed, "RNG seed")
        ->capture_default_str();
    eclosed->add_option("--out", eclosed_out, "report JSON path")->required();
    eclosed->add_option("--policies", policies,
                        "subset of synthesized,raw,nmpc")
        ->delimiter(',');
    eclosed->add_option("--traj-dir", traj_dir,
                        "dump scenario-0 rollouts into this directory");
    add_common(eclosed, eclosed_common);

    // plot
    auto* plot = app.add_subcommand("plot", "overhead SVG of one rollout");
    CommonOpts plot_common;
    std::string plot_traj, plot_scenario, plot_out;
    plot->add_option("--traj", plot_traj, "rollout CSV")->required();
    plot->add_option("--scenario", plot_scenario,
                     "scenario JSON (default: scenario0.json next to --traj)");
    plot->add_option("--out", plot_out, "SVG path")->required();
    add_common(plot, plot_common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return run_gen(gen_common, gen, n_init, steps, dt, gen_seed,
                           gen_out);
        if (train->parsed())
            return run_train(train_common, train, train_data, epochs, batch,
                             seq, lr, two_stage, train_seed, train_out);
        if (eopen->parsed())
            return run_eval_open(eopen_common, eopen_ckpt, eopen_data,
                                 eopen_out);
        if (eclosed->parsed())
            return run_eval_closed(eclosed_common, eclosed, eclosed_ckpt,
                                   scenarios, noise, solver, eclosed_seed,
                                   eclosed_out, policies, traj_dir);
        if (plot->parsed())
            return run_plot(plot_traj, plot_scenario, plot_out, plot_common);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
