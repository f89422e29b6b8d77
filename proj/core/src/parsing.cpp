#include "tg3d/parsing.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tg3d {

int64_t Mask::count() const {
  int64_t n = 0;
  for (uint8_t v : on) n += v != 0;
  return n;
}

BoundingBox mask_bounds(const Mask& mask) {
  BoundingBox b{mask.height, mask.width, -1, -1};
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.on[static_cast<size_t>(y) * mask.width + x]) continue;
      b.y0 = std::min(b.y0, y);
      b.x0 = std::min(b.x0, x);
      b.y1 = std::max(b.y1, y);
      b.x1 = std::max(b.x1, x);
    }
  return b;
}

const std::vector<std::string>& part_label_names() {
  static const std::vector<std::string> names{"skin", "hair", "eyes", "mouth", "accessory"};
  return names;
}

std::vector<Mask> region_masks(int height, int width, int grid) {
  if (grid < 1 || grid > std::min(height, width)) throw std::invalid_argument("region grid does not fit the image");
  std::vector<Mask> out;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      Mask m{height, width, std::vector<uint8_t>(static_cast<size_t>(height) * width, 0)};
      const int y0 = gy * height / grid, y1 = (gy + 1) * height / grid;
      const int x0 = gx * width / grid, x1 = (gx + 1) * width / grid;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.on[static_cast<size_t>(y) * width + x] = 1;
      out.push_back(std::move(m));
    }
  return out;
}

PartSet parse_parts(const Image& image, const LabelMap* aux, const ParserConfig& cfg) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<size_t>(image.height) * image.width * 3) {
    throw std::invalid_argument("parse_parts: invalid image");
  }
  PartSet parts;
  if (aux) {
    if (aux->height != image.height || aux->width != image.width) {
      throw std::invalid_argument("parse_parts: mask size differs from image size");
    }
    const auto& names = part_label_names();
    for (size_t label = 1; label <= names.size(); ++label) {
      Mask m{image.height, image.width, std::vector<uint8_t>(aux->labels.size())};
      for (size_t i = 0; i < aux->labels.size(); ++i) m.on[i] = aux->labels[i] == label;
      if (m.count() == 0) continue;
      parts.names.push_back(names[label - 1]);
      parts.masks.push_back(std::move(m));
    }
  } else {
    auto regions = region_masks(image.height, image.width, cfg.grid);
    for (size_t r = 0; r < regions.size(); ++r) {
      int64_t fg = 0;
      for (size_t p = 0; p < regions[r].on.size(); ++p) {
        if (!regions[r].on[p]) continue;
        for (int c = 0; c < 3; ++c) {
          if (std::abs(image.pixels[p * 3 + c] - cfg.background[static_cast<size_t>(c)]) > cfg.foreground_tol) {
            ++fg;
            break;
          }
        }
      }
      if (static_cast<double>(fg) < cfg.min_foreground * static_cast<double>(regions[r].count()) || fg == 0) continue;
      parts.names.push_back(fmt::format("region{}_{}", r / cfg.grid, r % cfg.grid));
      parts.masks.push_back(std::move(regions[r]));
    }
  }
  if (parts.masks.empty()) throw std::runtime_error("no parts found");
  if (static_cast<int>(parts.masks.size()) > cfg.max_parts) {
    parts.masks.resize(static_cast<size_t>(cfg.max_parts));
    parts.names.resize(static_cast<size_t>(cfg.max_parts));
  }
  return parts;
}

Tensor crop_parts(const Tensor& x, int index, const std::vector<Mask>& masks, int part_res) {
  if (masks.empty()) throw std::invalid_argument("no parts");
  if (part_res < 1) throw std::invalid_argument("crop_parts: part_res must be positive");
  const int h = x.dim(2), w = x.dim(3);
  Tensor img = x.dim(0) == 1 ? x : slice(x, 0, index, 1);
  std::vector<Tensor> crops;
  for (const auto& m : masks) {
    if (m.height != h || m.width != w) throw std::invalid_argument("crop_parts: mask size differs from image size");
    const BoundingBox b = mask_bounds(m);
    if (b.empty()) throw std::invalid_argument("crop_parts: empty mask");
    std::vector<double> mv(m.on.begin(), m.on.end());
    crops.push_back(crop_resize(mask_pixels(img, mv), b.y0, b.x0, b.height(), b.width(), part_res, part_res));
  }
  return concat(crops, 0);
}

}  // namespace tg3d
