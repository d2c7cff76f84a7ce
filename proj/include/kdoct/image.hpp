#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kdoct {

// 8-bit image, row-major, interleaved samples (HWC). channels is 1 or 3.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;

  bool empty() const { return pixels.empty(); }
  uint8_t at(int x, int y, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  uint8_t& at(int x, int y, int c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

ImageBuffer make_image(int width, int height, int channels, uint8_t fill = 0);

// Binary PGM (P5), maxval 255. Comments and arbitrary header whitespace are
// accepted on load; save always writes the canonical three-line header.
ImageBuffer load_pgm(const std::string& path);
void save_pgm(const ImageBuffer& img, const std::string& path);

// Bilinear resize with half-pixel centers and edge clamping.
ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h);

ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h);
ImageBuffer hflip(const ImageBuffer& img);
ImageBuffer vflip(const ImageBuffer& img);

// Enhancement factors blend toward a degenerate image; factor 1 is the
// identity for all of them.
ImageBuffer adjust_brightness(const ImageBuffer& img, double factor);
ImageBuffer adjust_contrast(const ImageBuffer& img, double factor);    // blends with mean luma
ImageBuffer adjust_saturation(const ImageBuffer& img, double factor);  // blends with per-pixel luma
ImageBuffer adjust_sharpness(const ImageBuffer& img, double factor);   // blends with 3x3 smooth

// Hue rotation by `delta` turns of the color wheel (delta in [-0.5, 0.5]).
// Single-channel images are returned unchanged.
ImageBuffer adjust_hue(const ImageBuffer& img, double delta);

// Separable Gaussian blur, odd kernel size, edge clamping.
ImageBuffer gaussian_blur(const ImageBuffer& img, int kernel, double sigma);

// Keeps the top `bits` bits of every sample.
ImageBuffer posterize(const ImageBuffer& img, int bits);

// Inverse-mapped affine warp about the image center with bilinear sampling;
// out-of-bounds source pixels read as 0. Forward map: rotate(angle) after
// x-shear(shear) after uniform scale, then translate by (tx, ty) pixels.
ImageBuffer affine_warp(const ImageBuffer& img, double angle_deg, double shear_deg, double scale,
                        double tx, double ty);

}  // namespace kdoct
