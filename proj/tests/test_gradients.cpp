#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "op_gradchecks.hpp"

// Central finite differences at 64-bit over every differentiable op.
TEST_CASE("all differentiable ops pass finite-difference checks below 1e-5") {
    for (const auto& r : opcheck::check_all(20)) {
        INFO(r.op << ": max rel err " << r.max_rel_err << " over " << r.elements
                  << " elements in " << r.instances << " instances");
        CHECK(r.max_rel_err < 1e-5);
        CHECK(r.instances >= 20);
    }
}
