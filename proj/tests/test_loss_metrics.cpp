#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sdkit/loss.hpp"
#include "sdkit/metrics.hpp"
#include "sdkit/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace sdkit;

namespace {

SparseDepthMapD random_gt(int h, int w, double density, Rng& rng, double lo = 1.0,
                          double hi = 60.0) {
    TensorD d(Shape{1, h, w});
    for (auto& v : d.data) v = rng.bernoulli(density) ? rng.uniform(lo, hi) : 0.0;
    bool any = false;
    for (double v : d.data) any = any || v > 0;
    if (!any) d.data[0] = rng.uniform(lo, hi);
    return SparseDepthMapD::from_depth(std::move(d));
}

} // namespace

TEST_CASE("masked_mse of a perfect prediction is zero") {
    Rng rng(41);
    auto gt = random_gt(6, 8, 0.5, rng);
    CHECK(masked_mse(gt.depth, gt) == 0.0);
}

TEST_CASE("masked_mse single valid pixel: gt 5, pred 3 gives 4") {
    TensorD d(Shape{1, 3, 3}, 0.0);
    d.at(0, 1, 1) = 5.0;
    auto gt = SparseDepthMapD::from_depth(std::move(d));
    TensorD pred(Shape{1, 3, 3}, 3.0);
    CHECK(masked_mse(pred, gt) == 4.0);
}

TEST_CASE("masked_mse matches the scalar-loop oracle to 1e-12") {
    Rng rng(42);
    for (int it = 0; it < 20; ++it) {
        auto gt = random_gt(8, 8, 0.5, rng);
        TensorD pred(Shape{1, 8, 8});
        for (auto& v : pred.data) v = rng.uniform(0.0, 60.0);
        const double ref = oracle::masked_mse(pred, gt.depth);
        CHECK(std::abs(masked_mse(pred, gt) - ref) <= 1e-12 * std::max(1.0, ref));
    }
}

TEST_CASE("masked_mse rejects an all-invalid ground truth") {
    TensorD d(Shape{1, 2, 2}, 0.0);
    SparseDepthMapD gt;
    gt.depth = d;
    gt.mask = ValidityMaskD(2, 2);
    TensorD pred(Shape{1, 2, 2}, 1.0);
    CHECK_THROWS_AS(masked_mse(pred, gt), std::invalid_argument);
}

TEST_CASE("masked_mse gradient is 2(pred-gt)/|V| on V and zero off V") {
    Rng rng(43);
    auto gt = random_gt(6, 6, 0.4, rng);
    TensorD pred(Shape{1, 6, 6});
    for (auto& v : pred.data) v = rng.uniform(0.0, 60.0);

    Tape<double> tape;
    auto p = tape.input(pred, true);
    tape.backward(tape.masked_mse(p, gt), {1.0}, false);
    const auto& g = tape.grad(p);
    const double nv = static_cast<double>(gt.mask.count());
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (gt.mask.data[i] == 0.0)
            CHECK(g[i] == 0.0);
        else
            CHECK(std::abs(g[i] - 2.0 * (pred.data[i] - gt.depth.data[i]) / nv) <= 1e-15);
    }

    auto build = [&](Tape<double>& t) {
        gradcheck::Built b;
        auto pv = t.input(pred, true);
        b.output = t.masked_mse(pv, gt);
        b.leaves = {pv};
        return b;
    };
    CHECK(gradcheck::run(build, {&pred}).max_rel_err < 1e-8);
}

TEST_CASE("loss schedule endpoints follow the quoted constants") {
    LossScheduleD s;
    CHECK(s.c_first(1) == 0.3);
    CHECK(s.c_first(5) == 0.0);
    CHECK(s.c_first(25) == 0.0);
    CHECK(s.c_first(3) == doctest::Approx(0.15).epsilon(1e-12));
    // non-increasing on the way down
    for (int e = 1; e < 10; ++e) CHECK(s.c_first(e + 1) <= s.c_first(e));

    LossScheduleD st;
    st.interp = LossScheduleD::Interp::Step;
    CHECK(st.c_first(1) == 0.3);
    CHECK(st.c_first(4) == 0.3);
    CHECK(st.c_first(5) == 0.0);
}

TEST_CASE("total loss blends the two terms per the schedule") {
    Rng rng(44);
    auto gt = random_gt(6, 8, 0.5, rng);
    TensorD d_first(Shape{1, 6, 8}), d_final(Shape{1, 6, 8});
    for (auto& v : d_first.data) v = rng.uniform(0.0, 60.0);
    for (auto& v : d_final.data) v = rng.uniform(0.0, 60.0);
    const double l1 = masked_mse(d_first, gt);
    const double lf = masked_mse(d_final, gt);

    CHECK(std::abs(total_loss(d_first, d_final, gt, 1) - (0.3 * l1 + lf)) <= 1e-12);
    CHECK(std::abs(total_loss(d_first, d_final, gt, 3) - (0.15 * l1 + lf)) <= 1e-12);
    CHECK(total_loss(d_first, d_final, gt, 5) == lf);
    CHECK(total_loss(d_first, d_final, gt, 25) == lf);
}

TEST_CASE("after the zero epoch the first stage receives no gradient") {
    Rng rng(45);
    auto gt = random_gt(4, 6, 0.5, rng);
    TensorD d_first(Shape{1, 4, 6}), d_final(Shape{1, 4, 6});
    for (auto& v : d_first.data) v = rng.uniform(0.0, 60.0);
    for (auto& v : d_final.data) v = rng.uniform(0.0, 60.0);

    Tape<double> tape;
    auto v1 = tape.input(d_first, true);
    auto v2 = tape.input(d_final, true);
    auto loss = total_loss_on_tape(tape, v1, v2, gt, 5);
    tape.backward(loss, {1.0}, false);
    for (double g : tape.grad(v1)) CHECK(g == 0.0);
    bool any = false;
    for (double g : tape.grad(v2)) any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("total loss gradient check at epoch 2") {
    Rng rng(46);
    auto gt = random_gt(4, 5, 0.6, rng);
    TensorD d_first(Shape{1, 4, 5}), d_final(Shape{1, 4, 5});
    for (auto& v : d_first.data) v = rng.uniform(0.0, 60.0);
    for (auto& v : d_final.data) v = rng.uniform(0.0, 60.0);
    auto build = [&](Tape<double>& t) {
        gradcheck::Built b;
        auto v1 = t.input(d_first, true);
        auto v2 = t.input(d_final, true);
        b.output = total_loss_on_tape(t, v1, v2, gt, 2);
        b.leaves = {v1, v2};
        return b;
    };
    CHECK(gradcheck::run(build, {&d_first, &d_final}).max_rel_err < 1e-8);
}

TEST_CASE("evaluate: perfect prediction scores zero on all four metrics") {
    Rng rng(47);
    auto gt = random_gt(6, 8, 0.5, rng);
    auto r = evaluate(gt.depth, gt);
    CHECK(r.rmse_mm == 0.0);
    CHECK(r.mae_mm == 0.0);
    CHECK(r.irmse_per_km == 0.0);
    CHECK(r.imae_per_km == 0.0);
    CHECK(r.valid_pixel_count == gt.mask.count());
}

TEST_CASE("evaluate single-pixel hand case: gt 10 m, pred 9 m") {
    TensorD d(Shape{1, 2, 2}, 0.0);
    d.at(0, 0, 0) = 10.0;
    auto gt = SparseDepthMapD::from_depth(std::move(d));
    TensorD pred(Shape{1, 2, 2}, 9.0);
    auto r = evaluate(pred, gt);
    CHECK(r.mae_mm == doctest::Approx(1000.0).epsilon(1e-12));
    CHECK(r.rmse_mm == doctest::Approx(1000.0).epsilon(1e-12));
    // |1000/10 - 1000/9| = 11.111... 1/km
    CHECK(r.imae_per_km == doctest::Approx(100.0 / 9.0).epsilon(1e-12));
    CHECK(r.irmse_per_km == doctest::Approx(100.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("evaluate matches the scalar-loop oracle to 1e-9 relative") {
    Rng rng(48);
    for (int it = 0; it < 20; ++it) {
        auto gt = random_gt(8, 10, 0.4, rng);
        TensorD pred(Shape{1, 8, 10});
        for (auto& v : pred.data) v = rng.uniform(0.5, 70.0);
        auto r = evaluate(pred, gt);
        auto ref = oracle::metrics(pred, gt.depth);
        CHECK(std::abs(r.rmse_mm - ref.rmse) <= 1e-9 * std::max(1.0, ref.rmse));
        CHECK(std::abs(r.mae_mm - ref.mae) <= 1e-9 * std::max(1.0, ref.mae));
        CHECK(std::abs(r.irmse_per_km - ref.irmse) <= 1e-9 * std::max(1.0, ref.irmse));
        CHECK(std::abs(r.imae_per_km - ref.imae) <= 1e-9 * std::max(1.0, ref.imae));
    }
}

TEST_CASE("metric report invariants: rmse >= mae, irmse >= imae, all >= 0") {
    Rng rng(49);
    for (int it = 0; it < 20; ++it) {
        auto gt = random_gt(8, 8, 0.5, rng);
        TensorD pred(Shape{1, 8, 8});
        for (auto& v : pred.data) v = rng.uniform(0.5, 70.0);
        auto r = evaluate(pred, gt);
        CHECK(r.rmse_mm >= 0.0);
        CHECK(r.mae_mm >= 0.0);
        CHECK(r.rmse_mm >= r.mae_mm - 1e-12);
        CHECK(r.irmse_per_km >= r.imae_per_km - 1e-12);
    }
}

TEST_CASE("metrics are permutation-invariant and scale correctly") {
    Rng rng(50);
    auto gt = random_gt(6, 6, 0.6, rng);
    TensorD pred(Shape{1, 6, 6});
    for (auto& v : pred.data) v = rng.uniform(0.5, 70.0);
    auto r = evaluate(pred, gt);

    // permutation: reverse both maps
    TensorD pred_r = pred;
    TensorD gt_r = gt.depth;
    std::reverse(pred_r.data.begin(), pred_r.data.end());
    std::reverse(gt_r.data.begin(), gt_r.data.end());
    auto rp = evaluate(pred_r, SparseDepthMapD::from_depth(std::move(gt_r)));
    CHECK(rp.rmse_mm == doctest::Approx(r.rmse_mm).epsilon(1e-12));
    CHECK(rp.imae_per_km == doctest::Approx(r.imae_per_km).epsilon(1e-12));

    // scaling depths by s scales the errors by s and the inverses by 1/s
    const double s = 1.75;
    TensorD pred_s = pred;
    TensorD gt_s = gt.depth;
    for (auto& v : pred_s.data) v *= s;
    for (auto& v : gt_s.data) v *= s;
    auto rs = evaluate(pred_s, SparseDepthMapD::from_depth(std::move(gt_s)));
    CHECK(rs.rmse_mm == doctest::Approx(r.rmse_mm * s).epsilon(1e-9));
    CHECK(rs.mae_mm == doctest::Approx(r.mae_mm * s).epsilon(1e-9));
    CHECK(rs.irmse_per_km == doctest::Approx(r.irmse_per_km / s).epsilon(1e-9));
    CHECK(rs.imae_per_km == doctest::Approx(r.imae_per_km / s).epsilon(1e-9));
}

TEST_CASE("report serialization: leaderboard column order and kv text") {
    MetricReport r;
    r.irmse_per_km = 2.11;
    r.imae_per_km = 0.92;
    r.rmse_mm = 733.69;
    r.mae_mm = 211.15;
    r.valid_pixel_count = 1234;
    CHECK(MetricReport::csv_header() == "iRMSE,iMAE,RMSE,MAE");
    CHECK(r.csv_row() == "2.110000,0.920000,733.690000,211.150000");
    const auto kv = r.kv_text();
    CHECK(kv.find("RMSE_mm=733.69") != std::string::npos);
    CHECK(kv.find("valid_pixel_count=1234") != std::string::npos);
}

TEST_CASE("aggregate averages per-image metrics") {
    MetricReport a, b;
    a.rmse_mm = 100;
    b.rmse_mm = 300;
    a.valid_pixel_count = 10;
    b.valid_pixel_count = 30;
    auto m = aggregate({a, b});
    CHECK(m.rmse_mm == 200.0);
    CHECK(m.valid_pixel_count == 40);
    CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
}
