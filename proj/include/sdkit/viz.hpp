#pragma once

#include "sdkit/tensor.hpp"

#include <array>
#include <string>

namespace sdkit::viz {

using Palette = std::array<std::array<unsigned char, 3>, 256>;

// Rainbow-style palette for depth maps (dark blue near, red far).
const Palette& turbo_palette();
// Diverging blue-grey-red palette for signed confidence maps.
const Palette& diverging_palette();

// Depth color-mapped over [0, d_max]; invalid handling is the caller's
// concern (zeros map to the near color).
void write_depth_viz(const TensorF& depth, double d_max, const std::string& path);

// Confidence logits mapped symmetrically around zero: the scale is the
// 99th percentile of |c|.
void write_confidence_viz(const TensorF& conf, const std::string& path);

} // namespace sdkit::viz
