#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fb/tensor.hpp"

namespace fb {

// Writes an H x W x C image (C = 1 or 3, values in [-1, 1]) as 8-bit PNG.
// Quantization is linear to [0, 255] with round-half-to-even.
void write_png(const std::string& path, const Tensor& image);

// Reads any 8/16-bit gray/palette/RGB(A) PNG as H x W x 3 in [-1, 1].
Tensor read_png(const std::string& path);

// Linear [-1,1] -> [0,255] quantizer used by write_png.
int quantize_pixel(double v);

// Minimal polyline chart (one colored line per series) for spectra plots.
void write_line_plot(const std::string& path,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series,
                     int width = 640, int height = 400);

}  // namespace fb
