#pragma once

#include <string>
#include <vector>

#include "tg3d/image.hpp"
#include "tg3d/tensor.hpp"

namespace tg3d {

/// Binary H x W mask, row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> on;

  int64_t count() const;
};

/// Inclusive pixel bounds of a mask's foreground.
struct BoundingBox {
  int y0 = 0, x0 = 0, y1 = -1, x1 = -1;

  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
  bool empty() const { return y1 < y0 || x1 < x0; }
};

BoundingBox mask_bounds(const Mask& mask);

/// Names of the ground-truth part labels 1..5 (label 0 is background).
const std::vector<std::string>& part_label_names();

struct ParserConfig {
  int grid = 2;                 // region parser: grid x grid cells
  double min_foreground = 0.02; // fraction of foreground pixels a region needs to be kept
  double foreground_tol = 0.1;  // per-channel distance from the background colour
  Vec3 background{1.0, 1.0, 1.0};
  int max_parts = 8;
};

struct PartSet {
  std::vector<std::string> names;
  std::vector<Mask> masks;
};

/// Ground-truth masks when `aux` is given (empty labels dropped), otherwise the
/// grid regions that contain enough foreground. Throws "no parts found" when nothing is left.
PartSet parse_parts(const Image& image, const LabelMap* aux, const ParserConfig& cfg = {});

/// grid x grid cells tiling an H x W image; the last row/column absorbs remainders.
std::vector<Mask> region_masks(int height, int width, int grid);

/// Masked crops of image `index` of x [B, 3, H, W]: background zeroed, tight
/// bounding box resized to part_res. Differentiable w.r.t. x; masks are constant.
Tensor crop_parts(const Tensor& x, int index, const std::vector<Mask>& masks, int part_res);

}  // namespace tg3d
