#pragma once

namespace sdkit::cpu {

// Queried once via cpuid; cached after the first call.
bool has_avx2();
bool has_fma();

} // namespace sdkit::cpu
