#pragma once

// Policy network: fixed-architecture MLP with tanh hidden layers and a
// linear output, stored as one flat parameter vector (row-major weights then
// bias per layer). Reverse mode runs off a tape of post-activations.

#include <cstdint>
#include <vector>

namespace safeode::neuralnet {

struct MLPSpec {
    std::vector<int> widths{104, 128, 256, 64, 16, 2};
};

int param_count(const MLPSpec& spec);
int weight_offset(const MLPSpec& spec, int layer);
int bias_offset(const MLPSpec& spec, int layer);

struct MLPParams {
    MLPSpec spec;
    std::vector<double> flat;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
MLPParams xavier_init(const MLPSpec& spec, std::uint64_t seed,
                      std::uint64_t stream = 0);

struct Tape {
    // Concatenated activations: input, then each layer's output.
    std::vector<double> acts;
    bool valid = false;
};

void forward(const MLPParams& p, const double* in, double* out);
void forward_taped(const MLPParams& p, const double* in, Tape& tape,
                   double* out);

// Accumulates into grad_flat (size param_count); grad_input may be null.
void backward(const MLPParams& p, const Tape& tape, const double* upstream,
              double* grad_flat, double* grad_input);

struct RMSprop {
    double lr = 1e-3;
    double rho = 0.99;
    double eps = 1e-8;
    long step = 0;
    std::vector<double> acc;
};

void rmsprop_step(std::vector<double>& params, const std::vector<double>& grads,
                  RMSprop& opt);

// Product of per-layer spectral norms (power iteration); an upper bound on
// the network's Lipschitz constant since tanh is 1-Lipschitz.
double lipschitz_bound(const MLPParams& p);

}  // namespace safeode::neuralnet
