#pragma once

#include <string>

#include "dfnet/tensor.hpp"

namespace dfnet {

/// Reads an 8-bit PNG as H x W x 3 floats in [0,1]. Grayscale and palette
/// images are expanded; alpha is dropped.
Tensor<float> read_png_rgb(const std::string& path);

/// Reads a grayscale PNG (8- or 16-bit) as H x W floats in [0,1].
Tensor<float> read_png_gray(const std::string& path);

void write_png_rgb8(const std::string& path, const Tensor<float>& image);
void write_png_gray8(const std::string& path, const Tensor<float>& image);

/// 16-bit grayscale, value = round(p * 65535). The heatmap interchange format.
void write_png_gray16(const std::string& path, const Tensor<float>& image);

}  // namespace dfnet
