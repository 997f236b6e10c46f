#include "safeode/kernels.hpp"

#include <cstdlib>

namespace safeode::kern {
namespace {

const Table* g_active = nullptr;
const char* g_name = "scalar";

const Table* pick_auto(const char** name) {
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_available()) {
        *name = "avx2";
        return &kAvx2;
    }
#endif
    *name = "scalar";
    return &kScalar;
}

void init_once() {
    if (g_active) return;
    const char* name = "scalar";
    const Table* t = pick_auto(&name);
    if (const char* env = std::getenv("SAFEODE_KERNELS")) {
        std::string_view want(env);
        if (want == "scalar") {
            t = &kScalar;
            name = "scalar";
        }
#if defined(__x86_64__) || defined(_M_X64)
        else if (want == "avx2" && avx2_available()) {
            t = &kAvx2;
            name = "avx2";
        }
#endif
    }
    g_active = t;
    g_name = name;
}

}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

bool select(std::string_view name) {
    init_once();
    if (name == "scalar") {
        g_active = &kScalar;
        g_name = "scalar";
        return true;
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (name == "avx2" && avx2_available()) {
        g_active = &kAvx2;
        g_name = "avx2";
        return true;
    }
#endif
    if (name == "auto") {
        const char* n = "scalar";
        g_active = pick_auto(&n);
        g_name = n;
        return true;
    }
    return false;
}

std::string_view active_name() {
    init_once();
    return g_name;
}

const Table& active() {
    init_once();
    return *g_active;
}

}  // namespace safeode::kern
