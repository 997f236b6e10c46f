#include "safeode/config.hpp"

#include <fstream>
#include <stdexcept>

namespace safeode {

// One field list drives serialization, override parsing, and key checking.
#define SAFEODE_CONFIG_FIELDS(X)                                              \
    X(wheelbase)                                                              \
    X(gain_p1)                                                                \
    X(gain_p2)                                                                \
    X(gain_p3)                                                                \
    X(theta_p)                                                                \
    X(bound_kappa)                                                            \
    X(disk_r)                                                                 \
    X(disk_y_off)                                                             \
    X(footprint_length)                                                       \
    X(footprint_width)                                                        \
    X(lidar_rays)                                                             \
    X(lidar_max_range)                                                        \
    X(preceding_speed)                                                        \
    X(desired_speed)                                                          \
    X(scenario_duration)                                                      \
    X(gap_min)                                                                \
    X(gap_max)                                                                \
    X(ego_v_min)                                                              \
    X(ego_v_max)                                                              \
    X(ego_heading_jitter)                                                     \
    X(ego_y_jitter)                                                           \
    X(psi_margin)                                                             \
    X(b0_margin)                                                              \
    X(nmpc_horizon)                                                           \
    X(nmpc_dt)                                                                \
    X(nmpc_w_u1)                                                              \
    X(nmpc_w_u2)                                                              \
    X(nmpc_terminal_p0)                                                       \
    X(nmpc_wy)                                                                \
    X(nmpc_wtheta)                                                            \
    X(nmpc_wv)                                                                \
    X(nmpc_safety_eps)                                                        \
    X(nmpc_penalty_mu)                                                        \
    X(nmpc_pg_tol)                                                            \
    X(nmpc_max_iters)                                                         \
    X(nmpc_restarts)                                                          \
    X(data_n_init)                                                            \
    X(data_steps)                                                             \
    X(data_dt)                                                                \
    X(data_lidar_noise)                                                       \
    X(rtol)                                                                   \
    X(atol)                                                                   \
    X(fixed_h)                                                                \
    X(max_steps)                                                              \
    X(mlp_hidden)                                                             \
    X(epochs)                                                                 \
    X(stage1_epochs)                                                          \
    X(train_steps_per_epoch)                                                  \
    X(train_substeps)                                                         \
    X(batch_size)                                                             \
    X(seq_len)                                                                \
    X(lr)                                                                     \
    X(lr_decay)                                                               \
    X(rms_rho)                                                                \
    X(rms_eps)                                                                \
    X(norm_lidar)                                                             \
    X(norm_theta)                                                             \
    X(norm_v)                                                                 \
    X(norm_u1)                                                                \
    X(norm_u2)                                                                \
    X(eval_scenarios)                                                         \
    X(eval_noise)                                                             \
    X(threads)

nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
#define SAFEODE_EMIT(name) j[#name] = cfg.name;
    SAFEODE_CONFIG_FIELDS(SAFEODE_EMIT)
#undef SAFEODE_EMIT
    j["u1_min"] = cfg.bounds.u_min.u1;
    j["u1_max"] = cfg.bounds.u_max.u1;
    j["u2_min"] = cfg.bounds.u_min.u2;
    j["u2_max"] = cfg.bounds.u_max.u2;
    return j;
}

void config_apply_overrides(RunConfig& cfg, const nlohmann::json& overrides) {
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
        const std::string& key = it.key();
        bool known = false;
#define SAFEODE_APPLY(name)                                                   \
    if (key == #name) {                                                       \
        it.value().get_to(cfg.name);                                          \
        known = true;                                                         \
    }
        SAFEODE_CONFIG_FIELDS(SAFEODE_APPLY)
#undef SAFEODE_APPLY
        if (key == "u1_min") {
            it.value().get_to(cfg.bounds.u_min.u1);
            known = true;
        }
        if (key == "u1_max") {
            it.value().get_to(cfg.bounds.u_max.u1);
            known = true;
        }
        if (key == "u2_min") {
            it.value().get_to(cfg.bounds.u_min.u2);
            known = true;
        }
        if (key == "u2_max") {
            it.value().get_to(cfg.bounds.u_max.u2);
            known = true;
        }
        if (!known) throw std::runtime_error("unknown config key: " + key);
    }
}

RunConfig config_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    RunConfig cfg;
    config_apply_overrides(cfg, j);
    return cfg;
}

}  // namespace safeode
