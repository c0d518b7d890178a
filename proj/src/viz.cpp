#include "sdkit/viz.hpp"

#include "sdkit/depth_io.hpp"
#include "sdkit/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace sdkit::viz {

namespace {

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Palette build_turbo() {
    // polynomial fit of the turbo colormap
    Palette p;
    for (int i = 0; i < 256; ++i) {
        const double t = i / 255.0;
        const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
        const double r = 0.13572138 + 4.61539260 * t - 42.66032258 * t2 + 132.13108234 * t3 -
                         152.94239396 * t4 + 59.28637943 * t5;
        const double g = 0.09140261 + 2.19418839 * t + 4.84296658 * t2 - 14.18503333 * t3 +
                         4.27729857 * t4 + 2.82956604 * t5;
        const double b = 0.10667330 + 12.64194608 * t - 60.58204836 * t2 + 110.36276771 * t3 -
                         89.90310912 * t4 + 27.34824973 * t5;
        p[i] = {to_byte(r), to_byte(g), to_byte(b)};
    }
    return p;
}

Palette build_diverging() {
    // blue (negative) through light grey to red (positive)
    Palette p;
    const double lo[3] = {59, 76, 192};
    const double mid[3] = {221, 221, 221};
    const double hi[3] = {180, 4, 38};
    for (int i = 0; i < 256; ++i) {
        const double t = i / 255.0;
        for (int c = 0; c < 3; ++c) {
            const double v = t < 0.5 ? lo[c] + (mid[c] - lo[c]) * (t / 0.5)
                                     : mid[c] + (hi[c] - mid[c]) * ((t - 0.5) / 0.5);
            p[i][c] = static_cast<unsigned char>(std::lround(v));
        }
    }
    return p;
}

void write_mapped(const TensorF& map, const Palette& pal,
                  const std::function<double(float)>& to_unit, const std::string& path) {
    const int h = map.height(), w = map.width();
    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double t = std::clamp(to_unit(map.at(0, y, x)), 0.0, 1.0);
            const auto& c = pal[static_cast<int>(std::lround(t * 255.0))];
            unsigned char* px = rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
        }
    io::write_color_png(rgb, h, w, path);
}

} // namespace

const Palette& turbo_palette() {
    static const Palette p = build_turbo();
    return p;
}

const Palette& diverging_palette() {
    static const Palette p = build_diverging();
    return p;
}

void write_depth_viz(const TensorF& depth, double d_max, const std::string& path) {
    write_mapped(depth, turbo_palette(),
                 [d_max](float v) { return static_cast<double>(v) / d_max; }, path);
}

void write_confidence_viz(const TensorF& conf, const std::string& path) {
    std::vector<float> mags(conf.data.size());
    for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(conf.data[i]);
    const float q = fusion::percentile(mags, 0.99);
    const double scale = q > 0 ? 1.0 / q : 0.0;
    write_mapped(conf, diverging_palette(),
                 [scale](float v) { return 0.5 + 0.5 * std::clamp(v * scale, -1.0, 1.0); }, path);
}

} // namespace sdkit::viz
