#include "gsreg/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <stdexcept>

namespace gsreg::kernels {

#if !defined(__x86_64__) && !defined(_M_X64)
const KernelTable* avx2_table() { return nullptr; }
#endif

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

std::atomic<const KernelTable*> g_active{nullptr};
std::once_flag g_init_once;

const KernelTable* resolve(std::string_view name) {
    if (name == "scalar") return scalar_table();
    if (name == "avx2") {
        const KernelTable* t = avx2_table();
        return (t && avx2_supported()) ? t : nullptr;
    }
    if (name == "auto" || name.empty()) {
        const KernelTable* t = avx2_table();
        if (t && avx2_supported()) return t;
        return scalar_table();
    }
    return nullptr;
}

void init_from_env() {
    const char* env = std::getenv("GSREG_KERNELS");
    const KernelTable* t = resolve(env ? std::string_view(env) : std::string_view("auto"));
    if (!t) t = scalar_table();  // unknown/unavailable request falls back
    g_active.store(t, std::memory_order_release);
}

}  // namespace

const KernelTable& active() {
    const KernelTable* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        std::call_once(g_init_once, init_from_env);
        t = g_active.load(std::memory_order_acquire);
    }
    return *t;
}

const KernelTable* table(std::string_view name) { return resolve(name); }

void force(std::string_view name) {
    const KernelTable* t = resolve(name);
    if (!t) throw std::invalid_argument("unknown or unavailable kernel table: " + std::string(name));
    std::call_once(g_init_once, [] {});  // mark initialized
    g_active.store(t, std::memory_order_release);
}

}  // namespace gsreg::kernels
