#include "sdkit/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sdkit::ckpt {

namespace {

void put_f32_le(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<unsigned char>(bits & 0xff));
    out.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string shape_token(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape(const std::string& token) {
    Shape s;
    std::size_t pos = 0;
    while (pos < token.size()) {
        const auto next = token.find('x', pos);
        const std::string part =
            next == std::string::npos ? token.substr(pos) : token.substr(pos, next - pos);
        s.push_back(std::stoi(part));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return s;
}

void atomic_write(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot create " + tmp);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
    }
    fs::rename(tmp, target);
}

} // namespace

void write_payload(const std::vector<NamedTensor>& tensors, const std::string& manifest_path,
                   const std::string& payload_path) {
    std::string manifest;
    std::vector<unsigned char> payload;
    std::int64_t offset = 0;
    for (const auto& t : tensors) {
        manifest += t.name + " " + shape_token(t.shape) + " " + std::to_string(offset) + "\n";
        for (float v : t.data) put_f32_le(payload, v);
        offset += static_cast<std::int64_t>(t.data.size());
    }
    atomic_write(manifest_path, manifest);
    atomic_write(payload_path,
                 std::string(reinterpret_cast<const char*>(payload.data()), payload.size()));
}

std::vector<NamedTensor> read_payload(const std::string& manifest_path,
                                      const std::string& payload_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open manifest: " + manifest_path);
    std::ifstream pf(payload_path, std::ios::binary);
    if (!pf) throw std::runtime_error("cannot open payload: " + payload_path);
    std::vector<unsigned char> payload{std::istreambuf_iterator<char>(pf),
                                       std::istreambuf_iterator<char>()};
    std::vector<NamedTensor> out;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        NamedTensor t;
        std::string shape_tok;
        std::int64_t offset = 0;
        if (!(ls >> t.name >> shape_tok >> offset))
            throw std::runtime_error("malformed manifest line: " + line);
        t.shape = parse_shape(shape_tok);
        const std::int64_t count = shape_numel(t.shape);
        if ((offset + count) * 4 > static_cast<std::int64_t>(payload.size()))
            throw std::runtime_error("payload too short for " + t.name);
        t.data.resize(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i)
            t.data[static_cast<std::size_t>(i)] = get_f32_le(payload.data() + (offset + i) * 4);
        out.push_back(std::move(t));
    }
    return out;
}

void save_network(NetworkT<float>& net, const std::string& dir, const Config& extra_meta) {
    std::vector<NamedTensor> tensors;
    net.visit_params([&tensors](const std::string& name, TensorT<float>& t) {
        tensors.push_back({name, t.shape, t.data});
    });
    write_payload(tensors, dir + "/params.manifest", dir + "/params.bin");

    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    Config meta = extra_meta;
    meta.set("variant", variant_tag(net.variant()));
    const auto& c = net.config();
    meta.set("base_width", std::to_string(c.base_width));
    meta.set("sffm_width", std::to_string(c.sffm_width));
    meta.set("sffm_depth", std::to_string(c.sffm_depth));
    meta.set("d_max", num(c.d_max));
    meta.set("cgm_alpha", num(c.cgm_alpha));
    meta.set("si_eps", num(c.si_eps));
    atomic_write(dir + "/meta.txt", meta.serialize());
}

Config read_meta(const std::string& dir) { return Config::from_file(dir + "/meta.txt"); }

NetworkT<float> load_network(const std::string& dir) {
    const Config meta = read_meta(dir);
    NetConfigT<float> cfg;
    cfg.base_width = meta.require_int("base_width");
    cfg.sffm_width = meta.require_int("sffm_width");
    cfg.sffm_depth = meta.require_int("sffm_depth");
    cfg.d_max = static_cast<float>(meta.require_double("d_max"));
    cfg.cgm_alpha = static_cast<float>(meta.require_double("cgm_alpha"));
    cfg.si_eps = static_cast<float>(meta.require_double("si_eps"));
    NetworkT<float> net(parse_variant(meta.get_str("variant", "")), cfg, 0);

    auto tensors = read_payload(dir + "/params.manifest", dir + "/params.bin");
    std::size_t index = 0;
    net.visit_params([&](const std::string& name, TensorT<float>& t) {
        if (index >= tensors.size())
            throw std::runtime_error("checkpoint is missing tensor " + name);
        const auto& src = tensors[index++];
        if (src.name != name || src.shape != t.shape)
            throw std::runtime_error("checkpoint mismatch at " + name + ": stored " + src.name +
                                     " " + shape_str(src.shape) + ", expected " +
                                     shape_str(t.shape));
        t.data = src.data;
    });
    if (index != tensors.size())
        throw std::runtime_error("checkpoint holds extra tensors beyond the architecture");
    return net;
}

} // namespace sdkit::ckpt
