#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdkit/depth_io.hpp"
#include "sdkit/rng.hpp"
#include "sdkit/synth.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sdkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sdkit_io_" + std::to_string(Rng(::getpid()).next_u64() % 1000000));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// 8-bit grayscale PNG, which the depth reader must refuse
void write_gray8_png(const std::string& path, int w, int h) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(w, 128);
    for (int y = 0; y < h; ++y) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

} // namespace

TEST_CASE("depth png codec: known pixel values") {
    TempDir tmp;
    TensorF d(Shape{1, 2, 3}, 0.0f);
    d.at(0, 0, 0) = 100.0f;        // pixel 25600
    d.at(0, 0, 1) = 0.5f;          // pixel 128
    d.at(0, 0, 2) = 255.99609375f; // pixel 65535, the max representable
    d.at(0, 1, 0) = 500.0f;        // clamps to 65535
    const auto path = tmp / "depth.png";
    io::write_depth_png(SparseDepthMapF::from_depth(std::move(d)), path);
    auto back = io::read_depth_png(path);
    CHECK(back.depth.at(0, 0, 0) == 100.0f);
    CHECK(back.depth.at(0, 0, 1) == 0.5f);
    CHECK(back.depth.at(0, 0, 2) == 255.99609375f);
    CHECK(back.depth.at(0, 1, 0) == 255.99609375f);
    // zero pixels stay invalid
    CHECK(back.mask.at(1, 1) == 0.0f);
    CHECK(back.mask.at(0, 0) == 1.0f);
    CHECK(back.depth.at(0, 1, 1) == 0.0f);
}

TEST_CASE("depth png round trip is byte-identical") {
    TempDir tmp;
    Rng rng(61);
    for (int it = 0; it < 5; ++it) {
        TensorF d(Shape{1, 8, 11});
        for (auto& v : d.data)
            v = rng.bernoulli(0.5)
                    ? static_cast<float>(rng.uniform(1.0 / 256.0, 65535.0 / 256.0))
                    : 0.0f;
        const auto p1 = tmp / ("a" + std::to_string(it) + ".png");
        const auto p2 = tmp / ("b" + std::to_string(it) + ".png");
        io::write_depth_png(SparseDepthMapF::from_depth(std::move(d)), p1);
        io::write_depth_png(io::read_depth_png(p1), p2);
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
}

TEST_CASE("depth quantization error stays below 1/512 m") {
    TempDir tmp;
    Rng rng(62);
    TensorF d(Shape{1, 6, 7});
    for (auto& v : d.data) v = static_cast<float>(rng.uniform(0.01, 250.0));
    TensorF orig = d;
    const auto path = tmp / "q.png";
    io::write_depth_png(SparseDepthMapF::from_depth(std::move(d)), path);
    auto back = io::read_depth_png(path);
    for (std::size_t i = 0; i < orig.data.size(); ++i)
        CHECK(std::abs(back.depth.data[i] - orig.data[i]) <= 1.0f / 512.0f + 1e-7f);
}

TEST_CASE("depth reader rejects wrong formats with a diagnostic") {
    TempDir tmp;
    const auto rgb_path = tmp / "rgb.png";
    io::write_color_png(std::vector<unsigned char>(2 * 2 * 3, 10), 2, 2, rgb_path);
    CHECK_THROWS_WITH_AS(io::read_depth_png(rgb_path),
                         doctest::Contains("must be single-channel 16-bit"), std::runtime_error);

    const auto gray8_path = tmp / "gray8.png";
    write_gray8_png(gray8_path, 3, 2);
    CHECK_THROWS_WITH_AS(io::read_depth_png(gray8_path), doctest::Contains("bit_depth=8"),
                         std::runtime_error);
}

TEST_CASE("color png: white, black, and fixture round trip") {
    TempDir tmp;
    std::vector<unsigned char> rgb = {255, 255, 255, 0, 0, 0, 10, 128, 200, 1, 2, 3};
    const auto path = tmp / "c.png";
    io::write_color_png(rgb, 2, 2, path);
    auto img = io::read_color_png(path);
    CHECK(img.at(0, 0, 0) == 1.0f);
    CHECK(img.at(1, 0, 0) == 1.0f);
    CHECK(img.at(2, 0, 0) == 1.0f);
    CHECK(img.at(0, 0, 1) == 0.0f);
    CHECK(img.at(1, 1, 1) == doctest::Approx(2.0 / 255.0));
    // a 16-bit depth map is not a valid color image
    TensorF d(Shape{1, 2, 2}, 1.0f);
    const auto dp = tmp / "d.png";
    io::write_depth_png(SparseDepthMapF::from_depth(std::move(d)), dp);
    CHECK_THROWS_AS(io::read_color_png(dp), std::runtime_error);
}

TEST_CASE("loaded sparse fixture density matches the generated density") {
    TempDir tmp;
    synth::SceneSpec spec;
    spec.seed = 63;
    spec.height = 64;
    spec.width = 128;
    auto scene = synth::render(spec);
    auto sparse = synth::sparsify(scene.dense_depth, 0.04, synth::SparsifyPattern::Scanline, 63);
    const double generated = sparse.density();
    const auto path = tmp / "s.png";
    io::write_depth_png(sparse, path);
    const double loaded = io::read_depth_png(path).density();
    CHECK(std::abs(loaded - generated) <= 0.005);
    CHECK(std::abs(loaded - 0.04) <= 0.005);
}

TEST_CASE("dataset layout: frame paths, listing, loading") {
    TempDir tmp;
    synth::DatasetSpec spec;
    spec.scenes = 5;
    spec.height = 16;
    spec.width = 32;
    spec.seed = 64;
    auto counts = synth::generate_dataset(tmp.path.string(), spec);
    CHECK(counts.train == 4);
    CHECK(counts.val + counts.test == 1);

    auto frames = io::list_frames(tmp.path.string(), "train");
    REQUIRE(frames.size() == 4);
    CHECK(frames[0].image.find("train/scene_0000/image/0000000000.png") != std::string::npos);
    auto frame = io::load_frame(frames[0]);
    CHECK(frame.color.channels() == 3);
    CHECK(frame.sparse.height() == 16);
    CHECK(frame.gt.width() == 32);
    CHECK(frame.gt.density() > frame.sparse.density());

    CHECK_THROWS_AS(io::list_frames(tmp.path.string(), "nope"), std::runtime_error);
}
