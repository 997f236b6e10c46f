#pragma once

// Trained-model snapshot: network weights, barrier gains, the penalty scale
// on the lifted constraint, and the input normalization constants. The
// training configuration is carried along verbatim so a checkpoint is
// self-describing.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safeode/neuralnet.hpp"

namespace safeode {

struct ModelCheckpoint {
    int format_version = 1;
    neuralnet::MLPSpec spec{{104, 128, 256, 64, 16, 2}};
    std::vector<double> params;  // flat network parameters

    std::array<double, 3> gains{10.0, 10.0, 10.0};  // p1, p2, p3 (all > 0)
    double theta_p = 1.0;                           // scale on the p3 term

    // Input scaling applied before the network: lidar ranges, heading,
    // speed, and the two current control channels.
    double norm_lidar = 1.0 / 50.0;
    double norm_theta = 1.0;
    double norm_v = 0.1;
    double norm_u1 = 1.0 / 0.6;
    double norm_u2 = 0.2;

    std::uint64_t seed = 0;
    nlohmann::ordered_json train_config;  // echoed resolved configuration
};

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace safeode
