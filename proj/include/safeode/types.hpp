#pragma once

namespace safeode {

// Kinematic bicycle state: rear-axle position, heading, speed.
struct VehicleState {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
    double v = 0.0;
};

// (steering angle, longitudinal acceleration); the rate of this pair is the
// decision variable of the safety filter.
struct ControlPair {
    double u1 = 0.0;
    double u2 = 0.0;
};

struct ControlBounds {
    ControlPair u_min{-0.6, -5.0};
    ControlPair u_max{0.6, 5.0};
};

struct AugmentedState {
    VehicleState s;
    ControlPair u;
};

}  // namespace safeode
