#include "safeode/kernels.hpp"

#include <cmath>

namespace safeode::kern {
namespace {

void matvec_bias_scalar(double* y, const double* W, const double* b,
                        const double* x, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const double* w = W + static_cast<long>(i) * cols;
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += w[j] * x[j];
        y[i] = s + b[i];
    }
}

void matvec_t_scalar(double* gx, const double* W, const double* gy,
                     int rows, int cols) {
    for (int j = 0; j < cols; ++j) gx[j] = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double* w = W + static_cast<long>(i) * cols;
        double g = gy[i];
        for (int j = 0; j < cols; ++j) gx[j] += g * w[j];
    }
}

void ger_acc_scalar(double* GW, const double* gy, const double* x,
                    int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        double* gw = GW + static_cast<long>(i) * cols;
        double g = gy[i];
        for (int j = 0; j < cols; ++j) gw[j] += g * x[j];
    }
}

void axpy_scalar(double* y, double a, const double* x, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void rmsprop_scalar(double* p, double* acc, const double* g, int n,
                    double lr, double rho, double eps) {
    for (int i = 0; i < n; ++i) {
        double a = rho * acc[i] + (1.0 - rho) * (g[i] * g[i]);
        acc[i] = a;
        p[i] -= lr * g[i] / (std::sqrt(a) + eps);
    }
}

}  // namespace

const Table kScalar = {
    matvec_bias_scalar, matvec_t_scalar, ger_acc_scalar,
    axpy_scalar,        dot_scalar,      rmsprop_scalar,
};

}  // namespace safeode::kern
