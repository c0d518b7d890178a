#pragma once

#include "sdkit/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdkit {

// KITTI-style evaluation numbers. RMSE/MAE in millimeters, the inverse
// metrics in 1/km. CSV column order follows the usual leaderboard layout.
struct MetricReport {
    double irmse_per_km = 0;
    double imae_per_km = 0;
    double rmse_mm = 0;
    double mae_mm = 0;
    std::int64_t valid_pixel_count = 0;

    static std::string csv_header() { return "iRMSE,iMAE,RMSE,MAE"; }

    std::string csv_row() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f", irmse_per_km, imae_per_km, rmse_mm,
                      mae_mm);
        return buf;
    }

    std::string kv_text() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "iRMSE_per_km=%.6f\niMAE_per_km=%.6f\nRMSE_mm=%.6f\nMAE_mm=%.6f\n"
                      "valid_pixel_count=%lld\n",
                      irmse_per_km, imae_per_km, rmse_mm, mae_mm,
                      static_cast<long long>(valid_pixel_count));
        return buf;
    }
};

// Per-image metrics over the valid set of gt. Predictions are clamped to
// >= 1e-3 m before inversion so the inverse metrics stay defined.
template <typename T>
MetricReport evaluate(const TensorT<T>& pred, const SparseDepthMapT<T>& gt) {
    if (pred.shape != gt.depth.shape)
        throw std::invalid_argument("evaluate shape mismatch: pred " + shape_str(pred.shape) +
                                    " vs gt " + shape_str(gt.depth.shape));
    const std::int64_t nv = gt.mask.count();
    if (nv == 0) throw std::invalid_argument("evaluate: ground truth has no valid pixels");
    double se = 0, ae = 0, ise = 0, iae = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        if (gt.mask.data[i] == T(0)) continue;
        const double g = static_cast<double>(gt.depth.data[i]);
        const double p = static_cast<double>(pred.data[i]);
        const double e_mm = (g - p) * 1000.0;
        se += e_mm * e_mm;
        ae += std::abs(e_mm);
        const double pc = std::max(p, 1e-3);
        const double ie = 1000.0 / g - 1000.0 / pc; // 1/km
        ise += ie * ie;
        iae += std::abs(ie);
    }
    MetricReport r;
    r.valid_pixel_count = nv;
    const double n = static_cast<double>(nv);
    r.rmse_mm = std::sqrt(se / n);
    r.mae_mm = ae / n;
    r.irmse_per_km = std::sqrt(ise / n);
    r.imae_per_km = iae / n;
    return r;
}

// Dataset aggregation: unweighted mean of per-image metrics (leaderboard
// convention), total pixel count for reference.
inline MetricReport aggregate(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate of no reports");
    MetricReport out;
    for (const auto& r : reports) {
        out.irmse_per_km += r.irmse_per_km;
        out.imae_per_km += r.imae_per_km;
        out.rmse_mm += r.rmse_mm;
        out.mae_mm += r.mae_mm;
        out.valid_pixel_count += r.valid_pixel_count;
    }
    const double n = static_cast<double>(reports.size());
    out.irmse_per_km /= n;
    out.imae_per_km /= n;
    out.rmse_mm /= n;
    out.mae_mm /= n;
    return out;
}

} // namespace sdkit
