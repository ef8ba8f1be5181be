#ifndef TARVIS_IMAGE_HPP
#define TARVIS_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "tarvis/tensor.hpp"

namespace tarvis {

/// Interleaved 8-bit RGB image.
struct ImageRgb8 {
  Index height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3

  ImageRgb8() = default;
  ImageRgb8(Index h, Index w) : height(h), width(w), pixels((std::size_t)(h * w * 3), 0) {}
  std::uint8_t& at(Index y, Index x, Index c) { return pixels[(std::size_t)((y * width + x) * 3 + c)]; }
  std::uint8_t at(Index y, Index x, Index c) const {
    return pixels[(std::size_t)((y * width + x) * 3 + c)];
  }
};

/// 16-bit single-channel id map.
struct ImageGray16 {
  Index height = 0, width = 0;
  std::vector<std::uint16_t> pixels;

  ImageGray16() = default;
  ImageGray16(Index h, Index w) : height(h), width(w), pixels((std::size_t)(h * w), 0) {}
  std::uint16_t& at(Index y, Index x) { return pixels[(std::size_t)(y * width + x)]; }
  std::uint16_t at(Index y, Index x) const { return pixels[(std::size_t)(y * width + x)]; }
};

void write_png(const std::string& path, const ImageRgb8& img);
void write_png(const std::string& path, const ImageGray16& img);
ImageRgb8 read_png_rgb8(const std::string& path);
ImageGray16 read_png_gray16(const std::string& path);

/// Frame t of an RGB clip tensor (T,H,W,3) in [0,1] -> quantized image.
ImageRgb8 frame_to_image(const Tensor& clip, Index t);
/// Full clip tensor from images (inverse of frame_to_image up to quantization).
Tensor images_to_clip(const std::vector<ImageRgb8>& frames);

}  // namespace tarvis

#endif
