#include "tg3d/image.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace tg3d {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  return f;
}

uint8_t to_byte(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_png_raw(const std::filesystem::path& path, int height, int width, int color_type, int channels,
                   const std::vector<uint8_t>& bytes) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: cannot allocate writer");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(fmt::format("libpng: failed writing '{}'", path.string()));
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png_raw(const std::filesystem::path& path, int& height, int& width, int want_channels) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: cannot allocate reader");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(fmt::format("libpng: failed reading '{}'", path.string()));
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
    png_set_gray_to_rgb(png);
  if (want_channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA))
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<size_t>(width) * want_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(fmt::format("'{}': unexpected PNG layout", path.string()));
  }
  std::vector<uint8_t> bytes(rowbytes * static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) png_read_row(png, bytes.data() + rowbytes * static_cast<size_t>(y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return bytes;
}

}  // namespace

Tensor to_tensor(const Image& img) { return to_tensor(std::span<const Image>(&img, 1)); }

Tensor to_tensor(std::span<const Image> imgs) {
  if (imgs.empty()) throw std::invalid_argument("to_tensor: no images");
  const int h = imgs[0].height, w = imgs[0].width;
  std::vector<double> out(imgs.size() * 3 * static_cast<size_t>(h) * w);
  for (size_t n = 0; n < imgs.size(); ++n) {
    if (imgs[n].height != h || imgs[n].width != w) throw std::invalid_argument("to_tensor: size mismatch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[((n * 3 + c) * h + y) * w + x] = imgs[n].at(y, x, c);
  }
  return Tensor::from({static_cast<int>(imgs.size()), 3, h, w}, std::move(out));
}

Image to_image(const Tensor& t, int index) {
  if (t.rank() != 4 || t.dim(1) != 3) {
    throw std::invalid_argument(fmt::format("to_image: expected [B, 3, H, W], got {}", shape_str(t.shape())));
  }
  const int h = t.dim(2), w = t.dim(3);
  Image img(h, w);
  const auto& d = t.data();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(y, x, c) = d[((static_cast<size_t>(index) * 3 + c) * h + y) * w + x];
  return img;
}

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels) v = to_byte(v) / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<uint8_t> bytes(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), bytes.begin(), to_byte);
  write_png_raw(path, img.height, img.width, PNG_COLOR_TYPE_RGB, 3, bytes);
}

Image read_png(const std::filesystem::path& path) {
  Image img;
  auto bytes = read_png_raw(path, img.height, img.width, 3);
  img.pixels.resize(bytes.size());
  std::transform(bytes.begin(), bytes.end(), img.pixels.begin(), [](uint8_t b) { return b / 255.0; });
  return img;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_png_raw(path, labels.height, labels.width, PNG_COLOR_TYPE_GRAY, 1, labels.labels);
}

LabelMap read_label_png(const std::filesystem::path& path) {
  LabelMap m;
  m.labels = read_png_raw(path, m.height, m.width, 1);
  return m;
}

void write_gray_png(const std::filesystem::path& path, int height, int width, std::span<const double> values,
                    double lo, double hi) {
  std::vector<uint8_t> bytes(values.size());
  const double range = hi > lo ? hi - lo : 1.0;
  std::transform(values.begin(), values.end(), bytes.begin(), [&](double v) { return to_byte((v - lo) / range); });
  write_png_raw(path, height, width, PNG_COLOR_TYPE_GRAY, 1, bytes);
}

void write_npy(const std::filesystem::path& path, const std::vector<int>& shape, std::span<const double> values) {
  std::string shape_txt = "(";
  for (size_t i = 0; i < shape.size(); ++i) shape_txt += std::to_string(shape[i]) + (shape.size() == 1 ? "," : (i + 1 < shape.size() ? ", " : ""));
  shape_txt += ")";
  std::string header = fmt::format("{{'descr': '<f8', 'fortran_order': False, 'shape': {}, }}", shape_txt);
  // magic(6) + version(2) + len(2) + header + '\n' is padded to a multiple of 64.
  const size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_npy(const std::filesystem::path& path, std::vector<int>* shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "\x93NUMPY", 6) != 0) throw std::runtime_error("not an NPY file");
  unsigned char len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  const size_t len = len_bytes[0] | (static_cast<size_t>(len_bytes[1]) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (header.find("'<f8'") == std::string::npos) throw std::runtime_error("NPY: only <f8 supported");
  const auto open = header.find('(', header.find("'shape'"));
  const auto close = header.find(')', open);
  std::vector<int> dims;
  size_t count = 1;
  std::string inner = header.substr(open + 1, close - open - 1);
  size_t pos = 0;
  while (pos < inner.size()) {
    while (pos < inner.size() && (inner[pos] == ' ' || inner[pos] == ',')) ++pos;
    if (pos >= inner.size()) break;
    size_t end = pos;
    while (end < inner.size() && std::isdigit(static_cast<unsigned char>(inner[end]))) ++end;
    dims.push_back(std::stoi(inner.substr(pos, end - pos)));
    count *= static_cast<size_t>(dims.back());
    pos = end;
  }
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("NPY: truncated data");
  if (shape) *shape = dims;
  return values;
}

Image tile_images(std::span<const Image> imgs, int columns) {
  if (imgs.empty()) return {};
  const int h = imgs[0].height, w = imgs[0].width;
  const int n = static_cast<int>(imgs.size());
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  Image out(rows * h, cols * w, 1.0);
  for (int i = 0; i < n; ++i) {
    const int oy = (i / cols) * h, ox = (i % cols) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = imgs[static_cast<size_t>(i)].at(y, x, c);
  }
  return out;
}

}  // namespace tg3d
