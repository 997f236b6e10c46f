#pragma once

// Forward-mode automatic differentiation with a fixed tangent width.
// Dual<double, N> carries one value and N directional derivatives;
// Dual<Dual<double, N>, N> carries second derivatives and is what the
// barrier code uses to get constraint-row Jacobians in one sweep.

#include <array>
#include <cmath>
#include <type_traits>

namespace safeode {

template <class T, int N>
struct Dual {
    T v;
    std::array<T, N> d;

    Dual() : v(T(0)) { d.fill(T(0)); }
    Dual(const T& value) : v(value) { d.fill(T(0)); }
    template <class U = T, class = std::enable_if_t<!std::is_same_v<U, double>>>
    Dual(double value) : v(value) {
        d.fill(T(0));
    }

    static Dual seeded(const T& value, int slot) {
        Dual r(value);
        r.d[slot] = T(1);
        return r;
    }

    Dual& operator+=(const Dual& o) {
        v += o.v;
        for (int i = 0; i < N; ++i) d[i] += o.d[i];
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        for (int i = 0; i < N; ++i) d[i] -= o.d[i];
        return *this;
    }
    Dual& operator*=(const Dual& o) { return *this = *this * o; }

    friend Dual operator+(Dual a, const Dual& b) { return a += b; }
    friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
    friend Dual operator-(const Dual& a) {
        Dual r;
        r.v = -a.v;
        for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
        return r;
    }
    friend Dual operator*(const Dual& a, const Dual& b) {
        Dual r;
        r.v = a.v * b.v;
        for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
        return r;
    }
    friend Dual operator/(const Dual& a, const Dual& b) {
        Dual r;
        r.v = a.v / b.v;
        for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) / b.v;
        return r;
    }

    friend Dual operator*(const Dual& a, double s) {
        Dual r;
        r.v = a.v * s;
        for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * s;
        return r;
    }
    friend Dual operator*(double s, const Dual& a) { return a * s; }
    friend Dual operator/(const Dual& a, double s) { return a * (1.0 / s); }
    friend Dual operator+(Dual a, double s) {
        a.v += s;
        return a;
    }
    friend Dual operator+(double s, Dual a) {
        a.v += s;
        return a;
    }
    friend Dual operator-(Dual a, double s) {
        a.v -= s;
        return a;
    }
    friend Dual operator-(double s, const Dual& a) { return -a + s; }

    friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
    friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
};

inline double value_of(double x) { return x; }
template <class T, int N>
double value_of(const Dual<T, N>& x) {
    return value_of(x.v);
}

template <class T, int N>
Dual<T, N> sin(const Dual<T, N>& a) {
    using std::cos;
    using std::sin;
    Dual<T, N> r;
    r.v = sin(a.v);
    T c = cos(a.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * c;
    return r;
}

template <class T, int N>
Dual<T, N> cos(const Dual<T, N>& a) {
    using std::cos;
    using std::sin;
    Dual<T, N> r;
    r.v = cos(a.v);
    T ms = -sin(a.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * ms;
    return r;
}

template <class T, int N>
Dual<T, N> tan(const Dual<T, N>& a) {
    using std::tan;
    Dual<T, N> r;
    r.v = tan(a.v);
    T w = T(1) + r.v * r.v;
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * w;
    return r;
}

template <class T, int N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
    using std::sqrt;
    Dual<T, N> r;
    r.v = sqrt(a.v);
    T half_inv = T(0.5) / r.v;
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * half_inv;
    return r;
}

template <class T, int N>
Dual<T, N> exp(const Dual<T, N>& a) {
    using std::exp;
    Dual<T, N> r;
    r.v = exp(a.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * r.v;
    return r;
}

}  // namespace safeode
