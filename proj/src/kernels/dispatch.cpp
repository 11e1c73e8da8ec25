#include "doge/kernels.hpp"

#include "doge/error.hpp"

#include <atomic>
#include <cstdlib>

namespace doge::kernels {

namespace {

Isa detect()
{
    if (std::getenv("DOGE_FORCE_SCALAR")) return Isa::scalar;
#ifdef DOGE_HAVE_AVX2
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
    return Isa::scalar;
}

struct Selection {
    std::atomic<Isa> isa;
    std::atomic<const Table*> table;
};

Selection& current()
{
    static Selection sel{detect(), nullptr};
    static const bool once = [] {
        sel.table.store(&table(sel.isa.load()));
        return true;
    }();
    (void)once;
    return sel;
}

}  // namespace

bool supported(Isa isa)
{
    if (isa == Isa::scalar) return true;
#ifdef DOGE_HAVE_AVX2
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Table& table(Isa isa)
{
    if (!supported(isa)) throw InvalidArgument(std::string("kernel set not supported on this CPU: ") + name(isa));
#ifdef DOGE_HAVE_AVX2
    if (isa == Isa::avx2) return avx2_table();
#endif
    return scalar_table();
}

Isa active_isa() { return current().isa.load(std::memory_order_relaxed); }

const Table& active() { return *current().table.load(std::memory_order_relaxed); }

void select(Isa isa)
{
    const Table* t = &table(isa);
    auto& sel = current();
    sel.isa.store(isa, std::memory_order_relaxed);
    sel.table.store(t, std::memory_order_relaxed);
}

const char* name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace doge::kernels
