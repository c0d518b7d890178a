#include "sdkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sdkit::synth {

namespace {

struct Hit {
    double depth = 0; // z distance, meters
    const float* albedo = nullptr;
};

double sample_depth(Rng& rng, const SceneSpec& s) {
    if (rng.bernoulli(s.near_fraction))
        return rng.uniform(s.min_depth, std::min(20.0, s.d_max));
    return rng.uniform(std::min(20.0, s.d_max), s.d_max * 0.9);
}

void random_albedo(Rng& rng, float* a) {
    a[0] = static_cast<float>(rng.uniform(0.25, 0.95));
    a[1] = static_cast<float>(rng.uniform(0.25, 0.95));
    a[2] = static_cast<float>(rng.uniform(0.25, 0.95));
}

// Ray direction through a pixel: ((u+.5-cx)/f, (v+.5-cy)/f, 1). The z
// component is 1, so a parameter t along the ray is the projective depth.
bool hit_box(const Box& b, double dx, double dy, double& t_out) {
    double t0 = 0.0, t1 = 1e30;
    const double dir[3] = {dx, dy, 1.0};
    const double lo[3] = {b.x0, b.y0, b.z0};
    const double hi[3] = {b.x1, b.y1, b.z1};
    for (int i = 0; i < 3; ++i) {
        if (std::abs(dir[i]) < 1e-12) {
            if (0.0 < lo[i] || 0.0 > hi[i]) return false;
            continue;
        }
        double ta = lo[i] / dir[i];
        double tb = hi[i] / dir[i];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (t0 <= 1e-9) return false;
    t_out = t0;
    return true;
}

bool hit_sphere(const Sphere& s, double dx, double dy, double& t_out) {
    const double a = dx * dx + dy * dy + 1.0;
    const double b = -2.0 * (dx * s.cx + dy * s.cy + s.cz);
    const double c = s.cx * s.cx + s.cy * s.cy + s.cz * s.cz - s.r * s.r;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t <= 1e-9) t = (-b + sq) / (2 * a);
    if (t <= 1e-9) return false;
    t_out = t;
    return true;
}

} // namespace

Scene build_scene(const SceneSpec& spec) {
    if (spec.height % 8 != 0 || spec.width % 8 != 0)
        throw std::invalid_argument("scene size must be divisible by 8");
    if (spec.min_depth <= 0 || spec.d_max <= spec.min_depth)
        throw std::invalid_argument("scene depth range is degenerate");
    if (spec.focal < 0) throw std::invalid_argument("degenerate camera focal length");
    const double f = spec.focal > 0 ? spec.focal : 0.6 * spec.width;

    Scene scene;
    scene.spec = spec;
    Rng rng = Rng::derive(spec.seed, "scene-primitives");
    for (int i = 0; i < spec.n_boxes; ++i) {
        Box b{};
        const double z = sample_depth(rng, spec);
        const double half_view = 0.55 * z * spec.width / f;
        const double cx = rng.uniform(-half_view, half_view);
        const double sx = rng.uniform(0.6, 3.0);
        const double sy = rng.uniform(0.8, 3.5);
        const double sz = rng.uniform(0.6, 4.0);
        b.x0 = cx - sx / 2;
        b.x1 = cx + sx / 2;
        const double ground_y = spec.ground_height + spec.ground_tilt * z;
        b.y1 = ground_y;
        b.y0 = ground_y - sy;
        b.z0 = z;
        b.z1 = z + sz;
        random_albedo(rng, b.albedo);
        scene.boxes.push_back(b);
    }
    for (int i = 0; i < spec.n_spheres; ++i) {
        Sphere s{};
        s.cz = sample_depth(rng, spec);
        const double half_view = 0.5 * s.cz * spec.width / f;
        s.cx = rng.uniform(-half_view, half_view);
        s.r = rng.uniform(0.3, 1.6);
        const double ground_y = spec.ground_height + spec.ground_tilt * s.cz;
        s.cy = rng.uniform(ground_y - 4.0, ground_y - s.r);
        random_albedo(rng, s.albedo);
        scene.spheres.push_back(s);
    }
    return scene;
}

RenderedScene render(const Scene& scene) {
    const SceneSpec& s = scene.spec;
    const double f = s.focal > 0 ? s.focal : 0.6 * s.width;
    const double cx = s.width / 2.0, cy = s.height / 2.0;
    static const float kGround[3] = {0.42f, 0.48f, 0.38f};
    static const float kSky[3] = {0.65f, 0.75f, 0.9f};

    RenderedScene out;
    out.color = TensorF(Shape{3, s.height, s.width});
    out.dense_depth = TensorF(Shape{1, s.height, s.width});

    for (int v = 0; v < s.height; ++v) {
        for (int u = 0; u < s.width; ++u) {
            const double dx = (u + 0.5 - cx) / f;
            const double dy = (v + 0.5 - cy) / f;

            Hit best;
            best.depth = s.d_max;
            best.albedo = kSky;
            bool checker = false;

            // ground plane y = ground_height + tilt * z
            const double denom = dy - s.ground_tilt;
            if (denom > 1e-9) {
                const double t = s.ground_height / denom;
                if (t > 0 && t < best.depth) {
                    best.depth = t;
                    best.albedo = kGround;
                    const double wx = dx * t, wz = t;
                    checker =
                        ((static_cast<long long>(std::floor(wx / 2.0)) +
                          static_cast<long long>(std::floor(wz / 2.0))) & 1) != 0;
                }
            }
            for (const auto& b : scene.boxes) {
                double t;
                if (hit_box(b, dx, dy, t) && t < best.depth) {
                    best.depth = t;
                    best.albedo = b.albedo;
                    checker = false;
                }
            }
            for (const auto& sp : scene.spheres) {
                double t;
                if (hit_sphere(sp, dx, dy, t) && t < best.depth) {
                    best.depth = t;
                    best.albedo = sp.albedo;
                    checker = false;
                }
            }

            out.dense_depth.at(0, v, u) = static_cast<float>(best.depth);
            const double shade = 1.0 - 0.55 * std::min(1.0, best.depth / s.d_max);
            const double tex = checker ? 0.8 : 1.0;
            for (int c = 0; c < 3; ++c)
                out.color.at(c, v, u) =
                    static_cast<float>(std::clamp(best.albedo[c] * shade * tex, 0.0, 1.0));
        }
    }
    return out;
}

SparseDepthMapF sparsify(const TensorF& dense, double density, SparsifyPattern pattern,
                         std::uint64_t seed) {
    if (!(density > 0.0) || density > 1.0)
        throw std::invalid_argument("sparsify density must lie in (0, 1], got " +
                                    std::to_string(density));
    const int h = dense.height(), w = dense.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    const std::size_t target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(density * static_cast<double>(n))));

    Rng rng = Rng::derive(seed, "sparsify");
    std::vector<std::uint32_t> candidates;
    if (pattern == SparsifyPattern::Uniform || density >= 0.999) {
        candidates.resize(n);
        std::iota(candidates.begin(), candidates.end(), 0u);
    } else {
        // jittered quasi-horizontal scan lines with roughly twice the pixels
        // the target needs
        const int lines = std::max(1, static_cast<int>(std::ceil(2.0 * density * h)));
        const double step = static_cast<double>(h) / lines;
        for (int li = 0; li < lines; ++li) {
            const double base = (li + 0.5) * step;
            const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979);
            const double amp = rng.uniform(0.0, std::max(0.5, step * 0.25));
            for (int x = 0; x < w; ++x) {
                const int y = static_cast<int>(
                    std::lround(base + amp * std::sin(phase + 6.0 * x / w)));
                if (y >= 0 && y < h)
                    candidates.push_back(static_cast<std::uint32_t>(y) * w + x);
            }
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    }

    const std::size_t take = std::min(target, candidates.size());
    for (std::size_t i = 0; i < take; ++i) { // partial Fisher-Yates
        const std::size_t j = i + rng.next_u64() % (candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
    }

    TensorF depth(Shape{1, h, w});
    for (std::size_t i = 0; i < take; ++i)
        depth.data[candidates[i]] = dense.data[candidates[i]];
    return SparseDepthMapF::from_depth(std::move(depth));
}

io::Frame augment(const io::Frame& frame, const AugmentConfig& cfg, Rng& rng) {
    if (cfg.jitter_amplitude < 0 || cfg.jitter_amplitude > 0.2)
        throw std::invalid_argument("jitter amplitude must lie in [0, 0.2]");
    io::Frame out = frame;
    if (!cfg.enabled) return out;

    if (rng.bernoulli(cfg.flip_prob)) {
        const int h = frame.color.height(), w = frame.color.width();
        auto flip_plane = [&](const float* src, float* dst) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    dst[static_cast<std::size_t>(y) * w + x] =
                        src[static_cast<std::size_t>(y) * w + (w - 1 - x)];
        };
        for (int c = 0; c < 3; ++c)
            flip_plane(frame.color.data.data() + static_cast<std::size_t>(c) * h * w,
                       out.color.data.data() + static_cast<std::size_t>(c) * h * w);
        flip_plane(frame.sparse.depth.data.data(), out.sparse.depth.data.data());
        flip_plane(frame.gt.depth.data.data(), out.gt.depth.data.data());
        out.sparse = SparseDepthMapF::from_depth(std::move(out.sparse.depth));
        out.gt = SparseDepthMapF::from_depth(std::move(out.gt.depth));
    }

    if (cfg.jitter_amplitude > 0) {
        const int plane = frame.color.height() * frame.color.width();
        for (int c = 0; c < 3; ++c) {
            const float s =
                static_cast<float>(1.0 + rng.uniform(-cfg.jitter_amplitude, cfg.jitter_amplitude));
            float* p = out.color.data.data() + static_cast<std::size_t>(c) * plane;
            for (int i = 0; i < plane; ++i) p[i] = std::clamp(p[i] * s, 0.0f, 1.0f);
        }
    }
    return out;
}

DatasetCounts split_counts(const DatasetSpec& spec) {
    DatasetCounts c;
    c.train = static_cast<int>(std::lround(spec.scenes * spec.train_fraction));
    const int rest = spec.scenes - c.train;
    c.val = rest / 2;
    c.test = rest - c.val;
    return c;
}

DatasetCounts generate_dataset(const std::string& root, const DatasetSpec& spec) {
    const DatasetCounts counts = split_counts(spec);
    int scene_index = 0;
    auto emit_split = [&](const std::string& split, int count) {
        for (int i = 0; i < count; ++i, ++scene_index) {
            SceneSpec ss;
            ss.seed = Rng::mix(spec.seed, "dataset-scene", scene_index);
            ss.height = spec.height;
            ss.width = spec.width;
            RenderedScene scene = render(ss);
            SparseDepthMapF sparse =
                sparsify(scene.dense_depth, spec.sparse_density, SparsifyPattern::Scanline,
                         Rng::mix(spec.seed, "dataset-sparse", scene_index));
            SparseDepthMapF gt =
                sparsify(scene.dense_depth, spec.gt_density, SparsifyPattern::Uniform,
                         Rng::mix(spec.seed, "dataset-gt", scene_index));

            const auto paths = io::frame_paths(root, split, i);
            std::vector<unsigned char> rgb(static_cast<std::size_t>(spec.height) * spec.width * 3);
            for (int y = 0; y < spec.height; ++y)
                for (int x = 0; x < spec.width; ++x)
                    for (int c = 0; c < 3; ++c)
                        rgb[(static_cast<std::size_t>(y) * spec.width + x) * 3 + c] =
                            static_cast<unsigned char>(
                                std::lround(scene.color.at(c, y, x) * 255.0));
            io::write_color_png(rgb, spec.height, spec.width, paths.image);
            io::write_depth_png(sparse, paths.sparse);
            io::write_depth_png(gt, paths.groundtruth);
        }
    };
    emit_split("train", counts.train);
    emit_split("val", counts.val);
    emit_split("test", counts.test);
    return counts;
}

} // namespace sdkit::synth
