#include "paa/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace paa::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

}  // namespace

void write_png(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw std::invalid_argument("write_png: expected [1|3,H,W] image");
  long c = image.dim(0), h = image.dim(1), w = image.dim(2);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng error while writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x)
      for (long ch = 0; ch < 3; ++ch) {
        long src = c == 3 ? ch : 0;
        row[x * 3 + ch] = to_byte(image[(src * h + y) * w + x]);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw std::runtime_error(path + " is not a PNG file");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng error while reading " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // normalize everything to 8-bit RGB
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_palette_to_rgb(png);
  png_read_update_info(png, info);

  long w = png_get_image_width(png, info);
  long h = png_get_image_height(png, info);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(h) * w * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (long y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out = Tensor::zeros({3, h, w});
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long c = 0; c < 3; ++c)
        out[(c * h + y) * w + x] = float(pixels[(y * w + x) * 3 + c]) / 255.0f;
  return out;
}

Tensor hstack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("hstack_images: no images");
  long c = images[0].dim(0), h = images[0].dim(1);
  const long gap = 2;
  long total_w = 0;
  for (const auto& im : images) {
    if (im.dim(0) != c || im.dim(1) != h)
      throw std::invalid_argument("hstack_images: mismatched image shapes");
    total_w += im.dim(2);
  }
  total_w += gap * (static_cast<long>(images.size()) - 1);
  Tensor out = Tensor::full({c, h, total_w}, 1.0f);
  long x0 = 0;
  for (const auto& im : images) {
    long w = im.dim(2);
    for (long ch = 0; ch < c; ++ch)
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
          out[(ch * h + y) * total_w + x0 + x] = im[(ch * h + y) * w + x];
    x0 += w + gap;
  }
  return out;
}

void draw_patch_grid(Tensor& image, long grid_side) {
  long c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (long g = 1; g < grid_side; ++g) {
    long y = g * h / grid_side, x = g * w / grid_side;
    for (long ch = 0; ch < c; ++ch) {
      for (long i = 0; i < w; ++i) image[(ch * h + y) * w + i] = 1.0f;
      for (long i = 0; i < h; ++i) image[(ch * h + i) * w + x] = 1.0f;
    }
  }
}

}  // namespace paa::io
