// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime cpuid check (see kernels.cpp).

#include "safeode/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

namespace safeode::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void matvec_bias_avx2(double* y, const double* W, const double* b,
                      const double* x, int rows, int cols) {
    int tail = cols & ~3;
    for (int i = 0; i < rows; ++i) {
        const double* w = W + static_cast<long>(i) * cols;
        __m256d acc = _mm256_setzero_pd();
        int j = 0;
        for (; j < tail; j += 4) {
            acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + j),
                                  _mm256_loadu_pd(x + j), acc);
        }
        double s = hsum(acc);
        for (; j < cols; ++j) s += w[j] * x[j];
        y[i] = s + b[i];
    }
}

void matvec_t_avx2(double* gx, const double* W, const double* gy,
                   int rows, int cols) {
    for (int j = 0; j < cols; ++j) gx[j] = 0.0;
    int tail = cols & ~3;
    for (int i = 0; i < rows; ++i) {
        const double* w = W + static_cast<long>(i) * cols;
        __m256d g = _mm256_set1_pd(gy[i]);
        int j = 0;
        for (; j < tail; j += 4) {
            __m256d acc = _mm256_loadu_pd(gx + j);
            acc = _mm256_fmadd_pd(g, _mm256_loadu_pd(w + j), acc);
            _mm256_storeu_pd(gx + j, acc);
        }
        for (; j < cols; ++j) gx[j] += gy[i] * w[j];
    }
}

void ger_acc_avx2(double* GW, const double* gy, const double* x,
                  int rows, int cols) {
    int tail = cols & ~3;
    for (int i = 0; i < rows; ++i) {
        double* gw = GW + static_cast<long>(i) * cols;
        __m256d g = _mm256_set1_pd(gy[i]);
        int j = 0;
        for (; j < tail; j += 4) {
            __m256d acc = _mm256_loadu_pd(gw + j);
            acc = _mm256_fmadd_pd(g, _mm256_loadu_pd(x + j), acc);
            _mm256_storeu_pd(gw + j, acc);
        }
        for (; j < cols; ++j) gw[j] += gy[i] * x[j];
    }
}

void axpy_avx2(double* y, double a, const double* x, int n) {
    int tail = n & ~3;
    __m256d av = _mm256_set1_pd(a);
    int i = 0;
    for (; i < tail; i += 4) {
        __m256d acc = _mm256_loadu_pd(y + i);
        acc = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), acc);
        _mm256_storeu_pd(y + i, acc);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot_avx2(const double* x, const double* y, int n) {
    int tail = n & ~3;
    __m256d acc = _mm256_setzero_pd();
    int i = 0;
    for (; i < tail; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i),
                              _mm256_loadu_pd(y + i), acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

// mul/add only (no fma) so results are bit-identical to the scalar path;
// sqrt and div are correctly rounded either way.
void rmsprop_avx2(double* p, double* acc, const double* g, int n,
                  double lr, double rho, double eps) {
    int tail = n & ~3;
    __m256d rhov = _mm256_set1_pd(rho);
    __m256d omr = _mm256_set1_pd(1.0 - rho);
    __m256d lrv = _mm256_set1_pd(lr);
    __m256d epsv = _mm256_set1_pd(eps);
    int i = 0;
    for (; i < tail; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d g2 = _mm256_mul_pd(gv, gv);
        __m256d a = _mm256_add_pd(_mm256_mul_pd(rhov, _mm256_loadu_pd(acc + i)),
                                  _mm256_mul_pd(omr, g2));
        _mm256_storeu_pd(acc + i, a);
        __m256d den = _mm256_add_pd(_mm256_sqrt_pd(a), epsv);
        __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, gv), den);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        double a = rho * acc[i] + (1.0 - rho) * (g[i] * g[i]);
        acc[i] = a;
        p[i] -= lr * g[i] / (std::sqrt(a) + eps);
    }
}

}  // namespace

const Table kAvx2 = {
    matvec_bias_avx2, matvec_t_avx2, ger_acc_avx2,
    axpy_avx2,        dot_avx2,      rmsprop_avx2,
};

}  // namespace safeode::kern

#endif  // x86_64
