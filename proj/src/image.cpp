#include "tarvis/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace tarvis {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

void write_png_impl(const std::string& path, Index height, Index width, int color_type,
                    int bit_depth, const std::vector<png_bytep>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png write error", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, (png_uint_32)width, (png_uint_32)height, bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // stored little-endian in memory
  png_write_image(png, const_cast<png_bytep*>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const ImageRgb8& img) {
  std::vector<png_bytep> rows((std::size_t)img.height);
  for (Index y = 0; y < img.height; ++y)
    rows[(std::size_t)y] = const_cast<png_bytep>(&img.pixels[(std::size_t)(y * img.width * 3)]);
  write_png_impl(path, img.height, img.width, PNG_COLOR_TYPE_RGB, 8, rows);
}

void write_png(const std::string& path, const ImageGray16& img) {
  std::vector<png_bytep> rows((std::size_t)img.height);
  for (Index y = 0; y < img.height; ++y)
    rows[(std::size_t)y] =
        const_cast<png_bytep>(reinterpret_cast<const png_byte*>(&img.pixels[(std::size_t)(y * img.width)]));
  write_png_impl(path, img.height, img.width, PNG_COLOR_TYPE_GRAY, 16, rows);
}

namespace {

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr fp;

  explicit PngReader(const std::string& path) : fp(std::fopen(path.c_str(), "rb")) {
    if (!fp) fail("cannot open for reading", path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("png_create_read_struct failed", path);
    info = png_create_info_struct(png);
    if (!info) fail("png_create_info_struct failed", path);
  }
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

}  // namespace

ImageRgb8 read_png_rgb8(const std::string& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) fail("png read error", path);
  png_init_io(r.png, r.fp.get());
  png_read_info(r.png, r.info);
  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);
  ImageRgb8 img((Index)png_get_image_height(r.png, r.info), (Index)png_get_image_width(r.png, r.info));
  if (png_get_rowbytes(r.png, r.info) != (std::size_t)(img.width * 3)) fail("unexpected row size", path);
  std::vector<png_bytep> rows((std::size_t)img.height);
  for (Index y = 0; y < img.height; ++y) rows[(std::size_t)y] = &img.pixels[(std::size_t)(y * img.width * 3)];
  png_read_image(r.png, rows.data());
  return img;
}

ImageGray16 read_png_gray16(const std::string& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) fail("png read error", path);
  png_init_io(r.png, r.fp.get());
  png_read_info(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (depth != 16 || color != PNG_COLOR_TYPE_GRAY) fail("expected 16-bit gray png", path);
  png_set_swap(r.png);
  png_read_update_info(r.png, r.info);
  ImageGray16 img((Index)png_get_image_height(r.png, r.info), (Index)png_get_image_width(r.png, r.info));
  std::vector<png_bytep> rows((std::size_t)img.height);
  for (Index y = 0; y < img.height; ++y)
    rows[(std::size_t)y] = reinterpret_cast<png_byte*>(&img.pixels[(std::size_t)(y * img.width)]);
  png_read_image(r.png, rows.data());
  return img;
}

ImageRgb8 frame_to_image(const Tensor& clip, Index t) {
  const Index H = clip.dim(1), W = clip.dim(2);
  ImageRgb8 img(H, W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) {
        double v = clip.at(t, y, x, c);
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        img.at(y, x, c) = (std::uint8_t)(v * 255.0 + 0.5);
      }
  return img;
}

Tensor images_to_clip(const std::vector<ImageRgb8>& frames) {
  if (frames.empty()) throw std::invalid_argument("images_to_clip: no frames");
  const Index T = (Index)frames.size(), H = frames[0].height, W = frames[0].width;
  Tensor clip({T, H, W, 3});
  for (Index t = 0; t < T; ++t) {
    if (frames[(std::size_t)t].height != H || frames[(std::size_t)t].width != W)
      throw std::invalid_argument("images_to_clip: frame size mismatch");
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        for (Index c = 0; c < 3; ++c)
          clip.at(t, y, x, c) = frames[(std::size_t)t].at(y, x, c) / 255.0;
  }
  return clip;
}

}  // namespace tarvis
