#pragma once

#include "sdkit/config.hpp"
#include "sdkit/network.hpp"
#include "sdkit/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sdkit::ckpt {

// Checkpoint layout: a directory holding
//   params.manifest / params.bin   network weights
//   optim.manifest  / optim.bin    ADAM moments (when training state is saved)
//   meta.txt                       flat key = value (variant, config, step)
// Manifest lines read `<layer path> <d0>x<d1>x... <element offset>`; the
// payload is flat little-endian 32-bit floats. Round trips are bit-exact.

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void write_payload(const std::vector<NamedTensor>& tensors, const std::string& manifest_path,
                   const std::string& payload_path);
std::vector<NamedTensor> read_payload(const std::string& manifest_path,
                                      const std::string& payload_path);

void save_network(NetworkT<float>& net, const std::string& dir,
                  const Config& extra_meta = Config());
// Reconstructs the network (variant + dimensions) from meta.txt and loads
// the weights.
NetworkT<float> load_network(const std::string& dir);

Config read_meta(const std::string& dir);

} // namespace sdkit::ckpt
