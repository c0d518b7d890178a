#pragma once

#include "sdkit/tensor.hpp"

#include <string>
#include <vector>

namespace sdkit::io {

// KITTI depth map convention: single-channel 16-bit PNG, depth in meters is
// pixel_value / 256, a zero pixel marks an invalid measurement. Values above
// 65535/256 m are clamped on write. Writes are atomic (temp file + rename).
SparseDepthMapF read_depth_png(const std::string& path);
void write_depth_png(const SparseDepthMapF& map, const std::string& path);

// 8-bit RGB PNG scaled to [0,1], channels-first.
TensorF read_color_png(const std::string& path);
void write_color_png(const std::vector<unsigned char>& rgb, int height, int width,
                     const std::string& path);

// Dataset directory layout: <root>/<split>/<scene>/{image,sparse,groundtruth}/NNNNNNNNNN.png
struct FramePaths {
    std::string image;
    std::string sparse;
    std::string groundtruth;
    std::string scene;
};

std::string scene_dir(const std::string& root, const std::string& split, int scene_index);
FramePaths frame_paths(const std::string& root, const std::string& split, int scene_index,
                       int frame_index = 0);
std::vector<FramePaths> list_frames(const std::string& root, const std::string& split);

struct Frame {
    TensorF color;
    SparseDepthMapF sparse;
    SparseDepthMapF gt;
};

Frame load_frame(const FramePaths& paths);

} // namespace sdkit::io
