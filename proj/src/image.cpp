#include "kdoct/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "kdoct/error.hpp"

namespace kdoct {

namespace {

uint8_t clamp_round(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void check_image(const ImageBuffer& img, const char* op) {
  if (img.width <= 0 || img.height <= 0)
    fail(ErrorCategory::data, std::string(op) + ": empty image");
  if (img.channels != 1 && img.channels != 3)
    fail(ErrorCategory::data, std::string(op) + ": channels must be 1 or 3, got " +
                                  std::to_string(img.channels));
  if (img.pixels.size() !=
      static_cast<size_t>(img.width) * static_cast<size_t>(img.height) *
          static_cast<size_t>(img.channels))
    fail(ErrorCategory::data, std::string(op) + ": sample count does not match W*H*C");
}

double luma(const ImageBuffer& img, int x, int y) {
  if (img.channels == 1) return img.at(x, y, 0);
  return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
}

// bilinear read with edge clamping
double sample_clamped(const ImageBuffer& img, double sx, double sy, int c) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0, fy = sy - y0;
  return (1.0 - fy) * ((1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c)) +
         fy * ((1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c));
}

// bilinear read where out-of-bounds taps contribute 0
double sample_zero_fill(const ImageBuffer& img, double sx, double sy, int c) {
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto tap = [&](int x, int y) -> double {
    if (x < 0 || x >= img.width || y < 0 || y >= img.height) return 0.0;
    return img.at(x, y, c);
  };
  return (1.0 - fy) * ((1.0 - fx) * tap(x0, y0) + fx * tap(x0 + 1, y0)) +
         fy * ((1.0 - fx) * tap(x0, y0 + 1) + fx * tap(x0 + 1, y0 + 1));
}

int read_pnm_token(std::ifstream& in, const std::string& path) {
  // skips whitespace and '#' comments, then reads one nonnegative integer
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  if (ch == EOF || !std::isdigit(ch))
    fail(ErrorCategory::format, "pgm: malformed header in " + path);
  long value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    if (value > 1 << 20) fail(ErrorCategory::format, "pgm: header value out of range in " + path);
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(value);
}

}  // namespace

ImageBuffer make_image(int width, int height, int channels, uint8_t fill) {
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(
      static_cast<size_t>(width) * static_cast<size_t>(height) * static_cast<size_t>(channels),
      fill);
  check_image(img, "make_image");
  return img;
}

ImageBuffer load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "pgm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5')
    fail(ErrorCategory::format, "pgm: " + path + " is not binary PGM (P5)");
  ImageBuffer img;
  img.width = read_pnm_token(in, path);
  img.height = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (img.width <= 0 || img.height <= 0)
    fail(ErrorCategory::format, "pgm: bad dimensions in " + path);
  if (maxval <= 0 || maxval > 255)
    fail(ErrorCategory::format, "pgm: unsupported maxval " + std::to_string(maxval) + " in " + path);
  in.get();  // single whitespace byte before the raster
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.width) * static_cast<size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    fail(ErrorCategory::format, "pgm: truncated raster in " + path);
  return img;
}

void save_pgm(const ImageBuffer& img, const std::string& path) {
  check_image(img, "save_pgm");
  if (img.channels != 1) fail(ErrorCategory::io, "pgm: only single-channel images can be saved");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::io, "pgm: cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) fail(ErrorCategory::io, "pgm: write failed for " + path);
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h) {
  check_image(img, "resize");
  if (out_w <= 0 || out_h <= 0) fail(ErrorCategory::data, "resize: output dims must be positive");
  if (out_w == img.width && out_h == img.height) return img;
  ImageBuffer out = make_image(out_w, out_h, img.channels);
  const double scale_x = static_cast<double>(img.width) / out_w;
  const double scale_y = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const double sx = (x + 0.5) * scale_x - 0.5;
      const double sy = (y + 0.5) * scale_y - 0.5;
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) = clamp_round(sample_clamped(img, sx, sy, c));
    }
  return out;
}

ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h) {
  check_image(img, "crop");
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width || y0 + h > img.height)
    fail(ErrorCategory::data, "crop: window [" + std::to_string(x0) + "," + std::to_string(y0) +
                                  "," + std::to_string(w) + "," + std::to_string(h) +
                                  "] outside " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height));
  if (x0 == 0 && y0 == 0 && w == img.width && h == img.height) return img;
  ImageBuffer out = make_image(w, h, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

ImageBuffer hflip(const ImageBuffer& img) {
  check_image(img, "hflip");
  ImageBuffer out = make_image(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

ImageBuffer vflip(const ImageBuffer& img) {
  check_image(img, "vflip");
  ImageBuffer out = make_image(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x, img.height - 1 - y, c);
  return out;
}

ImageBuffer adjust_brightness(const ImageBuffer& img, double factor) {
  check_image(img, "brightness");
  ImageBuffer out = img;
  for (auto& v : out.pixels) v = clamp_round(v * factor);
  return out;
}

ImageBuffer adjust_contrast(const ImageBuffer& img, double factor) {
  check_image(img, "contrast");
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) mean += luma(img, x, y);
  mean /= static_cast<double>(img.width) * static_cast<double>(img.height);
  ImageBuffer out = img;
  for (auto& v : out.pixels) v = clamp_round((1.0 - factor) * mean + factor * v);
  return out;
}

ImageBuffer adjust_saturation(const ImageBuffer& img, double factor) {
  check_image(img, "saturation");
  if (img.channels == 1) return img;
  ImageBuffer out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double l = luma(img, x, y);
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = clamp_round((1.0 - factor) * l + factor * img.at(x, y, c));
    }
  return out;
}

ImageBuffer adjust_sharpness(const ImageBuffer& img, double factor) {
  check_image(img, "sharpness");
  ImageBuffer out = img;
  // smooth kernel [[1,1,1],[1,5,1],[1,1,1]]/13, applied to the interior only;
  // the one-pixel border keeps the original values
  static const double kKernel[3][3] = {{1, 1, 1}, {1, 5, 1}, {1, 1, 1}};
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += kKernel[dy + 1][dx + 1] * img.at(x + dx, y + dy, c);
        const double smooth = acc / 13.0;
        out.at(x, y, c) = clamp_round((1.0 - factor) * smooth + factor * img.at(x, y, c));
      }
  return out;
}

ImageBuffer adjust_hue(const ImageBuffer& img, double delta) {
  check_image(img, "hue");
  if (img.channels == 1 || delta == 0.0) return img;
  ImageBuffer out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double r = img.at(x, y, 0) / 255.0;
      const double g = img.at(x, y, 1) / 255.0;
      const double b = img.at(x, y, 2) / 255.0;
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double v = mx, d = mx - mn;
      const double s = mx == 0.0 ? 0.0 : d / mx;
      double h = 0.0;
      if (d > 0.0) {
        if (mx == r)
          h = std::fmod((g - b) / d, 6.0);
        else if (mx == g)
          h = (b - r) / d + 2.0;
        else
          h = (r - g) / d + 4.0;
        h /= 6.0;
        if (h < 0.0) h += 1.0;
      }
      h = h + delta - std::floor(h + delta);  // wrap to [0,1)
      const double hh = h * 6.0;
      const int sector = static_cast<int>(hh) % 6;
      const double f = hh - std::floor(hh);
      const double p = v * (1.0 - s);
      const double q = v * (1.0 - s * f);
      const double t = v * (1.0 - s * (1.0 - f));
      double rr = v, gg = v, bb = v;
      switch (sector) {
        case 0: rr = v; gg = t; bb = p; break;
        case 1: rr = q; gg = v; bb = p; break;
        case 2: rr = p; gg = v; bb = t; break;
        case 3: rr = p; gg = q; bb = v; break;
        case 4: rr = t; gg = p; bb = v; break;
        default: rr = v; gg = p; bb = q; break;
      }
      out.at(x, y, 0) = clamp_round(rr * 255.0);
      out.at(x, y, 1) = clamp_round(gg * 255.0);
      out.at(x, y, 2) = clamp_round(bb * 255.0);
    }
  return out;
}

ImageBuffer gaussian_blur(const ImageBuffer& img, int kernel, double sigma) {
  check_image(img, "blur");
  if (kernel < 1 || kernel % 2 == 0)
    fail(ErrorCategory::config, "blur: kernel must be a positive odd integer");
  if (!(sigma > 0.0)) fail(ErrorCategory::config, "blur: sigma must be > 0");
  if (kernel == 1) return img;
  const int r = kernel / 2;
  std::vector<double> w(static_cast<size_t>(kernel));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    w[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += w[static_cast<size_t>(i + r)];
  }
  for (auto& v : w) v /= sum;

  // horizontal then vertical pass, edge clamped, kept in double between passes
  std::vector<double> tmp(img.pixels.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += w[static_cast<size_t>(i + r)] *
                 img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        tmp[static_cast<size_t>((y * img.width + x) * img.channels + c)] = acc;
      }
  ImageBuffer out = make_image(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int yy = std::clamp(y + i, 0, img.height - 1);
          acc += w[static_cast<size_t>(i + r)] *
                 tmp[static_cast<size_t>((yy * img.width + x) * img.channels + c)];
        }
        out.at(x, y, c) = clamp_round(acc);
      }
  return out;
}

ImageBuffer posterize(const ImageBuffer& img, int bits) {
  check_image(img, "posterize");
  if (bits < 1 || bits > 8)
    fail(ErrorCategory::config, "posterize: bits must be in [1,8], got " + std::to_string(bits));
  if (bits == 8) return img;
  const uint8_t mask = static_cast<uint8_t>(0xFF << (8 - bits));
  ImageBuffer out = img;
  for (auto& v : out.pixels) v = static_cast<uint8_t>(v & mask);
  return out;
}

ImageBuffer affine_warp(const ImageBuffer& img, double angle_deg, double shear_deg, double scale,
                        double tx, double ty) {
  check_image(img, "affine");
  if (!(scale > 0.0)) fail(ErrorCategory::config, "affine: scale must be > 0");
  if (angle_deg == 0.0 && shear_deg == 0.0 && scale == 1.0 && tx == 0.0 && ty == 0.0) return img;
  const double rad = angle_deg * M_PI / 180.0;
  const double sh = std::tan(shear_deg * M_PI / 180.0);
  const double ca = std::cos(rad), sa = std::sin(rad);
  // forward 2x2: rotate * shear * scale
  const double a = ca * scale, b = (ca * sh - sa) * scale;
  const double c = sa * scale, d = (sa * sh + ca) * scale;
  const double det = a * d - b * c;
  if (std::abs(det) < 1e-12) fail(ErrorCategory::config, "affine: singular transform");
  const double ia = d / det, ib = -b / det, ic = -c / det, id = a / det;
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;

  ImageBuffer out = make_image(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx - tx, dy = y - cy - ty;
      const double sx = ia * dx + ib * dy + cx;
      const double sy = ic * dx + id * dy + cy;
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(x, y, ch) = clamp_round(sample_zero_fill(img, sx, sy, ch));
    }
  return out;
}

}  // namespace kdoct
