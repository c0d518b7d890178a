#include "sdkit/depth_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <stdexcept>

namespace sdkit::io {

namespace {

constexpr double kDepthScale = 256.0;
constexpr double kMaxDepth = 65535.0 / kDepthScale;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngImage {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::vector<png_byte>> rows;
};

PngImage read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open PNG: " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw std::runtime_error("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    PngImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("PNG decode error: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    img.color_type = png_get_color_type(png, info);

    img.rows.resize(img.height);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_bytep> row_ptrs(img.height);
    for (int y = 0; y < img.height; ++y) {
        img.rows[y].resize(rowbytes);
        row_ptrs[y] = img.rows[y].data();
    }
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, int width, int height, int bit_depth, int color_type,
               const std::vector<std::vector<png_byte>>& rows) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        FilePtr f(std::fopen(tmp.c_str(), "wb"));
        if (!f) throw std::runtime_error("cannot create file: " + tmp);
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (!png) throw std::runtime_error("libpng init failed");
        png_infop info = png_create_info_struct(png);
        if (!info) {
            png_destroy_write_struct(&png, nullptr);
            throw std::runtime_error("libpng init failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("PNG encode error: " + path);
        }
        png_init_io(png, f.get());
        png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<png_bytep> row_ptrs(height);
        for (int y = 0; y < height; ++y)
            row_ptrs[y] = const_cast<png_bytep>(rows[y].data());
        png_write_image(png, row_ptrs.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    fs::rename(tmp, target);
}

} // namespace

SparseDepthMapF read_depth_png(const std::string& path) {
    PngImage img = read_png(path);
    if (img.color_type != PNG_COLOR_TYPE_GRAY || img.bit_depth != 16)
        throw std::runtime_error(
            "depth PNG must be single-channel 16-bit, got color_type=" +
            std::to_string(img.color_type) + " bit_depth=" + std::to_string(img.bit_depth) +
            ": " + path);
    TensorF depth(Shape{1, img.height, img.width});
    for (int y = 0; y < img.height; ++y) {
        const png_byte* row = img.rows[y].data();
        for (int x = 0; x < img.width; ++x) {
            const unsigned v = (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1];
            depth.at(0, y, x) = static_cast<float>(v / kDepthScale);
        }
    }
    return SparseDepthMapF::from_depth(std::move(depth));
}

void write_depth_png(const SparseDepthMapF& map, const std::string& path) {
    const int h = map.height(), w = map.width();
    std::vector<std::vector<png_byte>> rows(h);
    for (int y = 0; y < h; ++y) {
        rows[y].resize(static_cast<std::size_t>(w) * 2);
        for (int x = 0; x < w; ++x) {
            unsigned v = 0;
            if (map.mask.at(y, x) != 0.f) {
                const double d = std::clamp(static_cast<double>(map.depth.at(0, y, x)), 0.0, kMaxDepth);
                v = static_cast<unsigned>(std::lround(d * kDepthScale));
            }
            rows[y][2 * x] = static_cast<png_byte>((v >> 8) & 0xff);
            rows[y][2 * x + 1] = static_cast<png_byte>(v & 0xff);
        }
    }
    write_png(path, w, h, 16, PNG_COLOR_TYPE_GRAY, rows);
}

TensorF read_color_png(const std::string& path) {
    PngImage img = read_png(path);
    if (img.color_type != PNG_COLOR_TYPE_RGB || img.bit_depth != 8)
        throw std::runtime_error(
            "color PNG must be 8-bit RGB, got color_type=" + std::to_string(img.color_type) +
            " bit_depth=" + std::to_string(img.bit_depth) + ": " + path);
    TensorF out(Shape{3, img.height, img.width});
    for (int y = 0; y < img.height; ++y) {
        const png_byte* row = img.rows[y].data();
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = static_cast<float>(row[3 * x + c] / 255.0);
    }
    return out;
}

void write_color_png(const std::vector<unsigned char>& rgb, int height, int width,
                     const std::string& path) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
        throw std::invalid_argument("rgb buffer size does not match dimensions");
    std::vector<std::vector<png_byte>> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y].assign(rgb.begin() + static_cast<std::size_t>(y) * width * 3,
                       rgb.begin() + static_cast<std::size_t>(y + 1) * width * 3);
    write_png(path, width, height, 8, PNG_COLOR_TYPE_RGB, rows);
}

std::string scene_dir(const std::string& root, const std::string& split, int scene_index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", scene_index);
    return root + "/" + split + "/" + buf;
}

FramePaths frame_paths(const std::string& root, const std::string& split, int scene_index,
                       int frame_index) {
    char name[32];
    std::snprintf(name, sizeof(name), "%010d.png", frame_index);
    const std::string dir = scene_dir(root, split, scene_index);
    FramePaths p;
    p.image = dir + "/image/" + name;
    p.sparse = dir + "/sparse/" + name;
    p.groundtruth = dir + "/groundtruth/" + name;
    p.scene = dir;
    return p;
}

std::vector<FramePaths> list_frames(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(root) / split;
    if (!fs::is_directory(base))
        throw std::runtime_error("no such split directory: " + base.string());
    std::vector<std::string> scenes;
    for (const auto& e : fs::directory_iterator(base))
        if (e.is_directory()) scenes.push_back(e.path().filename().string());
    std::sort(scenes.begin(), scenes.end());
    std::vector<FramePaths> out;
    for (const auto& scene : scenes) {
        const fs::path img_dir = base / scene / "image";
        if (!fs::is_directory(img_dir)) continue;
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(img_dir))
            if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const auto& n : names) {
            FramePaths p;
            p.image = (base / scene / "image" / n).string();
            p.sparse = (base / scene / "sparse" / n).string();
            p.groundtruth = (base / scene / "groundtruth" / n).string();
            p.scene = (base / scene).string();
            out.push_back(std::move(p));
        }
    }
    return out;
}

Frame load_frame(const FramePaths& paths) {
    Frame f;
    f.color = read_color_png(paths.image);
    f.sparse = read_depth_png(paths.sparse);
    f.gt = read_depth_png(paths.groundtruth);
    return f;
}

} // namespace sdkit::io
