#include "safeode/neuralnet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "safeode/kernels.hpp"
#include "safeode/rng.hpp"

namespace safeode::neuralnet {

int param_count(const MLPSpec& spec) {
    int n = 0;
    for (size_t l = 0; l + 1 < spec.widths.size(); ++l)
        n += spec.widths[l + 1] * (spec.widths[l] + 1);
    return n;
}

int weight_offset(const MLPSpec& spec, int layer) {
    int off = 0;
    for (int l = 0; l < layer; ++l)
        off += spec.widths[l + 1] * (spec.widths[l] + 1);
    return off;
}

int bias_offset(const MLPSpec& spec, int layer) {
    return weight_offset(spec, layer) + spec.widths[layer + 1] * spec.widths[layer];
}

MLPParams xavier_init(const MLPSpec& spec, std::uint64_t seed,
                      std::uint64_t stream) {
    MLPParams p{spec, std::vector<double>(param_count(spec), 0.0)};
    auto rng = make_rng(seed, stream);
    for (size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        int rows = spec.widths[l + 1], cols = spec.widths[l];
        double r = std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> d(-r, r);
        double* W = p.flat.data() + weight_offset(spec, static_cast<int>(l));
        for (int i = 0; i < rows * cols; ++i) W[i] = d(rng);
    }
    return p;
}

namespace {

int layer_count(const MLPSpec& s) { return static_cast<int>(s.widths.size()) - 1; }

int acts_size(const MLPSpec& s) {
    int n = 0;
    for (int w : s.widths) n += w;
    return n;
}

}  // namespace

void forward(const MLPParams& p, const double* in, double* out) {
    Tape scratch;
    forward_taped(p, in, scratch, out);
}

void forward_taped(const MLPParams& p, const double* in, Tape& tape,
                   double* out) {
    const MLPSpec& s = p.spec;
    const int L = layer_count(s);
    tape.acts.resize(acts_size(s));
    tape.valid = true;
    double* cur = tape.acts.data();
    std::copy(in, in + s.widths[0], cur);
    int off = 0;
    for (int l = 0; l < L; ++l) {
        const double* x = tape.acts.data() + off;
        double* y = tape.acts.data() + off + s.widths[l];
        kern::matvec_bias(y, p.flat.data() + weight_offset(s, l),
                          p.flat.data() + bias_offset(s, l), x, s.widths[l + 1],
                          s.widths[l]);
        if (l + 1 < L)
            for (int i = 0; i < s.widths[l + 1]; ++i) y[i] = std::tanh(y[i]);
        off += s.widths[l];
    }
    std::copy(tape.acts.end() - s.widths[L], tape.acts.end(), out);
}

void backward(const MLPParams& p, const Tape& tape, const double* upstream,
              double* grad_flat, double* grad_input) {
    if (!tape.valid) throw std::runtime_error("backward without a live tape");
    const MLPSpec& s = p.spec;
    const int L = layer_count(s);
    int max_w = 0;
    for (int w : s.widths) max_w = std::max(max_w, w);
    std::vector<double> gz(max_w), gx(max_w);

    int off_out = acts_size(s) - s.widths[L];
    std::copy(upstream, upstream + s.widths[L], gz.begin());
    for (int l = L - 1; l >= 0; --l) {
        int rows = s.widths[l + 1], cols = s.widths[l];
        const double* a = tape.acts.data() + off_out;       // layer output
        const double* x = tape.acts.data() + off_out - cols;  // layer input
        if (l + 1 < L)
            for (int i = 0; i < rows; ++i) gz[i] *= 1.0 - a[i] * a[i];
        kern::ger_acc(grad_flat + weight_offset(s, l), gz.data(), x, rows, cols);
        double* gb = grad_flat + bias_offset(s, l);
        for (int i = 0; i < rows; ++i) gb[i] += gz[i];
        if (l > 0 || grad_input) {
            kern::matvec_t(gx.data(), p.flat.data() + weight_offset(s, l),
                           gz.data(), rows, cols);
            if (l == 0) {
                for (int i = 0; i < cols; ++i) grad_input[i] += gx[i];
            } else {
                std::copy(gx.begin(), gx.begin() + cols, gz.begin());
            }
        }
        off_out -= cols;
    }
}

void rmsprop_step(std::vector<double>& params, const std::vector<double>& grads,
                  RMSprop& opt) {
    if (params.size() != grads.size())
        throw std::invalid_argument("parameter/gradient size mismatch");
    if (opt.acc.size() != params.size()) opt.acc.assign(params.size(), 0.0);
    kern::rmsprop(params.data(), opt.acc.data(), grads.data(),
                  static_cast<int>(params.size()), opt.lr, opt.rho, opt.eps);
    opt.step += 1;
}

double lipschitz_bound(const MLPParams& p) {
    const MLPSpec& s = p.spec;
    double bound = 1.0;
    for (int l = 0; l < layer_count(s); ++l) {
        int rows = s.widths[l + 1], cols = s.widths[l];
        const double* W = p.flat.data() + weight_offset(s, l);
        std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
        std::vector<double> wv(rows), zero_b(rows, 0.0);
        double sigma = 0.0;
        for (int it = 0; it < 60; ++it) {
            kern::matvec_bias(wv.data(), W, zero_b.data(), v.data(), rows, cols);
            std::vector<double> vn(cols, 0.0);
            kern::matvec_t(vn.data(), W, wv.data(), rows, cols);
            double nrm = std::sqrt(kern::dot(vn.data(), vn.data(), cols));
            if (nrm == 0.0) break;
            for (int i = 0; i < cols; ++i) v[i] = vn[i] / nrm;
            sigma = std::sqrt(nrm);
        }
        bound *= sigma;
    }
    return bound;
}

}  // namespace safeode::neuralnet
