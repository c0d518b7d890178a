#include "sdkit/cpu_features.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#include <cpuid.h>
#define SDKIT_X86 1
#endif

namespace sdkit::cpu {

namespace {

struct Features {
    bool avx2 = false;
    bool fma = false;
};

Features detect() {
    Features f;
#ifdef SDKIT_X86
    unsigned eax, ebx, ecx, edx;
    if (__get_cpuid(1, &eax, &ebx, &ecx, &edx)) {
        f.fma = (ecx & bit_FMA) != 0;
        // AVX2 also requires OS support for YMM state (XSAVE/OSXSAVE).
        bool osxsave = (ecx & bit_OSXSAVE) != 0;
        if (osxsave && __get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx))
            f.avx2 = (ebx & bit_AVX2) != 0;
    }
#endif
    return f;
}

const Features& features() {
    static const Features f = detect();
    return f;
}

} // namespace

bool has_avx2() { return features().avx2; }
bool has_fma() { return features().fma; }

} // namespace sdkit::cpu
