#pragma once

#include <string>
#include <vector>

#include "paa/tensor.hpp"

namespace paa::io {

// [C,H,W] float in [0,1] (C = 1 or 3) -> 8-bit RGB PNG
void write_png(const std::string& path, const Tensor& image);

// PNG -> [3,H,W] float in [0,1]
Tensor read_png(const std::string& path);

// side-by-side horizontal strip of [C,H,W] images with a 2px divider
Tensor hstack_images(const std::vector<Tensor>& images);

// draw a 1px grid over patch boundaries (in place)
void draw_patch_grid(Tensor& image, long grid_side);

}  // namespace paa::io
