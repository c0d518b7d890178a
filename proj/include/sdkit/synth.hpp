#pragma once

#include "sdkit/depth_io.hpp"
#include "sdkit/rng.hpp"
#include "sdkit/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sdkit::synth {

// Deterministic script for one ray-cast scene: a ground plane plus boxes
// and spheres. The same seed renders bit-identically.
struct SceneSpec {
    std::uint64_t seed = 0;
    int height = 64;
    int width = 256;         // both divisible by 8
    double ground_height = 1.5;  // camera height above the ground, meters
    double ground_tilt = 0.0;    // dy per meter of forward distance
    int n_boxes = 6;
    int n_spheres = 3;
    double min_depth = 2.0;
    double d_max = 80.0;         // far plane; sky pixels carry this depth
    double focal = 0.0;          // pixels; 0 picks 0.6 * width
    double near_fraction = 0.7;  // share of primitives placed within 20 m
};

struct Box {
    double x0, x1, y0, y1, z0, z1;
    float albedo[3];
};

struct Sphere {
    double cx, cy, cz, r;
    float albedo[3];
};

struct Scene {
    SceneSpec spec;
    std::vector<Box> boxes;
    std::vector<Sphere> spheres;
};

struct RenderedScene {
    TensorF color;        // 3 x H x W in [0,1]
    TensorF dense_depth;  // 1 x H x W, positive and finite everywhere
};

Scene build_scene(const SceneSpec& spec);
RenderedScene render(const Scene& scene);
inline RenderedScene render(const SceneSpec& spec) { return render(build_scene(spec)); }

enum class SparsifyPattern { Uniform, Scanline };

// Subsample a dense map to the requested density (exact pixel count up to
// rounding). Scanline keeps pixels on jittered quasi-horizontal lines.
SparseDepthMapF sparsify(const TensorF& dense, double density, SparsifyPattern pattern,
                         std::uint64_t seed);

struct AugmentConfig {
    double jitter_amplitude = 0.2; // per-channel multiplicative, at most 0.2
    double flip_prob = 0.5;
    bool enabled = true;
};

// Horizontal flip applied jointly to all three maps; color jitter touches
// the image only.
io::Frame augment(const io::Frame& frame, const AugmentConfig& cfg, Rng& rng);

struct DatasetSpec {
    int scenes = 200;
    int height = 64;
    int width = 256;
    double sparse_density = 0.04;
    double gt_density = 0.16;
    std::uint64_t seed = 7;
    double train_fraction = 0.8; // remainder split evenly into val / test
};

struct DatasetCounts {
    int train = 0, val = 0, test = 0;
};

DatasetCounts split_counts(const DatasetSpec& spec);

// Writes the depth-io layout under root. Deterministic per seed.
DatasetCounts generate_dataset(const std::string& root, const DatasetSpec& spec);

} // namespace sdkit::synth
