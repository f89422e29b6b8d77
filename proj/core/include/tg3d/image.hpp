#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tg3d/tensor.hpp"

namespace tg3d {

/// RGB image with interleaved channels in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // height * width * 3

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

/// Per-pixel integer labels (part index; 0 = background).
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> labels;
};

/// Image -> [1, 3, H, W] constant tensor.
Tensor to_tensor(const Image& img);
/// Stack images into a [B, 3, H, W] constant tensor.
Tensor to_tensor(std::span<const Image> imgs);
/// Sample `index` of a [B, 3, H, W] tensor.
Image to_image(const Tensor& t, int index = 0);

/// Quantizes to 8 bits with round-to-nearest, as stored in PNG.
Image quantize8(const Image& img);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
/// Single-channel 8-bit PNG holding label indices.
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_png(const std::filesystem::path& path);
/// Grayscale PNG of `values` linearly mapped from [lo, hi] to [0, 255].
void write_gray_png(const std::filesystem::path& path, int height, int width, std::span<const double> values,
                    double lo, double hi);

/// NPY v1.0, little-endian float64, C order.
void write_npy(const std::filesystem::path& path, const std::vector<int>& shape, std::span<const double> values);
std::vector<double> read_npy(const std::filesystem::path& path, std::vector<int>* shape = nullptr);

/// Side-by-side grid of equally sized images.
Image tile_images(std::span<const Image> imgs, int columns);

}  // namespace tg3d
