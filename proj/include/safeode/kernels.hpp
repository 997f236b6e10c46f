#ifndef SAFEODE_KERNELS_HPP
#define SAFEODE_KERNELS_HPP

#include <string_view>

namespace safeode::kern {

// Dense double-precision primitives behind the network and optimizer hot
// loops. A scalar reference implementation always exists; an AVX2+FMA
// variant is selected at runtime when the CPU supports it. The two are
// equivalence-tested against each other (see tests/test_kernels.cpp).
struct Table {
    // y = W * x + b, W row-major (rows x cols)
    void (*matvec_bias)(double* y, const double* W, const double* b,
                        const double* x, int rows, int cols);
    // gx = W^T * gy
    void (*matvec_t)(double* gx, const double* W, const double* gy,
                     int rows, int cols);
    // GW += gy * x^T  (rank-1 accumulate)
    void (*ger_acc)(double* GW, const double* gy, const double* x,
                    int rows, int cols);
    // y += a * x
    void (*axpy)(double* y, double a, const double* x, int n);
    double (*dot)(const double* x, const double* y, int n);
    // acc = rho*acc + (1-rho)*g^2 ; p -= lr * g / (sqrt(acc) + eps)
    void (*rmsprop)(double* p, double* acc, const double* g, int n,
                    double lr, double rho, double eps);
};

extern const Table kScalar;
#if defined(__x86_64__) || defined(_M_X64)
extern const Table kAvx2;
#endif

bool avx2_available();

// "scalar", "avx2" or "auto". Returns false (and leaves the selection
// unchanged) if the requested variant is not available on this CPU.
bool select(std::string_view name);
std::string_view active_name();
const Table& active();

inline void matvec_bias(double* y, const double* W, const double* b,
                        const double* x, int rows, int cols) {
    active().matvec_bias(y, W, b, x, rows, cols);
}
inline void matvec_t(double* gx, const double* W, const double* gy,
                     int rows, int cols) {
    active().matvec_t(gx, W, gy, rows, cols);
}
inline void ger_acc(double* GW, const double* gy, const double* x,
                    int rows, int cols) {
    active().ger_acc(GW, gy, x, rows, cols);
}
inline void axpy(double* y, double a, const double* x, int n) {
    active().axpy(y, a, x, n);
}
inline double dot(const double* x, const double* y, int n) {
    return active().dot(x, y, n);
}
inline void rmsprop(double* p, double* acc, const double* g, int n,
                    double lr, double rho, double eps) {
    active().rmsprop(p, acc, g, n, lr, rho, eps);
}

}  // namespace safeode::kern

#endif
