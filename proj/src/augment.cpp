#include "kdoct/augment.hpp"

#include <cmath>
#include <string>

#include "kdoct/error.hpp"

namespace kdoct {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    fail(ErrorCategory::config,
         std::string("profile: ") + name + " must be in [0,1], got " + std::to_string(p));
}

// float conversion and standardization are split so random erasing can run
// between them; their composition is shared by every pipeline
Tensor unit_chw(const ImageBuffer& img) {
  const int w = img.width, h = img.height;
  std::vector<float> out(static_cast<size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 1 ? 0 : c;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<size_t>(c) * h + y) * w + x] =
            static_cast<float>(img.at(x, y, src_c) / 255.0);
  }
  return Tensor::from({3, h, w}, std::move(out));
}

void standardize(Tensor& t, const AugmentationProfile& profile) {
  const int64_t plane = t.dim(1) * t.dim(2);
  auto vals = t.values();
  for (int c = 0; c < 3; ++c) {
    // float arithmetic so a pixel sitting exactly at the mean maps to 0
    const float mean = static_cast<float>(profile.norm_mean[static_cast<size_t>(c)]);
    const float inv_std = static_cast<float>(1.0 / profile.norm_std[static_cast<size_t>(c)]);
    for (int64_t i = 0; i < plane; ++i) {
      float& v = vals[static_cast<size_t>(c * plane + i)];
      v = (v - mean) * inv_std;
    }
  }
}

}  // namespace

void validate_profile(const AugmentationProfile& p) {
  if (p.crop_size <= 0)
    fail(ErrorCategory::config, "profile: crop_size must be positive, got " +
                                    std::to_string(p.crop_size));
  if (p.crop_size > p.resize_large)
    fail(ErrorCategory::config, "profile: crop_size " + std::to_string(p.crop_size) +
                                    " exceeds resize_large " + std::to_string(p.resize_large));
  if (p.randaugment_n < 0)
    fail(ErrorCategory::config, "profile: randaugment_n must be >= 0");
  if (p.randaugment_m < 0 || p.randaugment_m > 10)
    fail(ErrorCategory::config, "profile: randaugment_m must be in [0,10], got " +
                                    std::to_string(p.randaugment_m));
  if (!(p.scale_lo > 0.0) || p.scale_hi < p.scale_lo)
    fail(ErrorCategory::config, "profile: scale range must satisfy 0 < lo <= hi");
  if (!(p.erase_scale_lo > 0.0) || !(p.erase_scale_hi < 1.0) || p.erase_scale_hi < p.erase_scale_lo)
    fail(ErrorCategory::config, "profile: erase scale range must lie within (0,1)");
  if (p.posterize_bits < 1 || p.posterize_bits > 8)
    fail(ErrorCategory::config, "profile: posterize_bits must be in [1,8], got " +
                                    std::to_string(p.posterize_bits));
  if (p.blur_kernel < 1 || p.blur_kernel % 2 == 0)
    fail(ErrorCategory::config, "profile: blur_kernel must be odd and positive, got " +
                                    std::to_string(p.blur_kernel));
  check_prob(p.p_hflip, "p_hflip");
  check_prob(p.p_vflip, "p_vflip");
  check_prob(p.p_blur, "p_blur");
  check_prob(p.p_posterize, "p_posterize");
  check_prob(p.p_erase, "p_erase");
  for (double s : p.norm_std)
    if (!(s > 0.0)) fail(ErrorCategory::config, "profile: normalization std must be positive");
}

AugmentationProfile teacher_augment_profile() { return AugmentationProfile{}; }

AugmentationProfile student_augment_profile() {
  AugmentationProfile p;
  p.randaugment_m = 7;
  p.rotation_deg = 15.0;
  p.p_blur = 0.0;
  p.p_posterize = 0.0;
  return p;
}

uint64_t sample_seed(uint64_t global_seed, int64_t epoch, int64_t sample_index) {
  return hash_combine(global_seed, static_cast<uint64_t>(epoch),
                      static_cast<uint64_t>(sample_index));
}

ImageBuffer rand_augment(const ImageBuffer& img, int n, int m, RngStream& rng) {
  if (m < 0 || m > 10)
    fail(ErrorCategory::config, "rand_augment: magnitude must be in [0,10], got " +
                                    std::to_string(m));
  ImageBuffer out = img;
  for (int i = 0; i < n; ++i) {
    const int op = static_cast<int>(rng.uniform_int(6));
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    switch (op) {
      case 0:
      case 1:
      case 2:
      case 3: {
        // identity at m=0 is exact because factor-1 applications are skipped
        const double factor = 1.0 + sign * 0.05 * m;
        if (factor == 1.0) break;
        if (op == 0) out = adjust_brightness(out, factor);
        else if (op == 1) out = adjust_contrast(out, factor);
        else if (op == 2) out = adjust_saturation(out, factor);
        else out = adjust_sharpness(out, factor);
        break;
      }
      case 4:
        out = affine_warp(out, sign * 3.0 * m, 0.0, 1.0, 0.0, 0.0);
        break;
      default: {
        // one translation op moves both axes, each with its own sign
        const double sign_y = rng.bernoulli(0.5) ? 1.0 : -1.0;
        const double t = (m / 10.0) * 0.1 * out.width;
        out = affine_warp(out, 0.0, 0.0, 1.0, sign * t, sign_y * t);
        break;
      }
    }
  }
  return out;
}

Tensor random_erasing(Tensor t, double p, double lo, double hi, RngStream& rng) {
  if (t.rank() != 3)
    fail(ErrorCategory::shape, "random_erasing: expected rank-3 CHW tensor, got rank " +
                                   std::to_string(t.rank()));
  if (!rng.bernoulli(p)) return t;
  const int64_t channels = t.dim(0), h = t.dim(1), w = t.dim(2);
  const double area = static_cast<double>(h) * static_cast<double>(w);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double frac = rng.uniform(lo, hi);
    const double aspect = rng.uniform(1.0 / 3.0, 3.0);
    const int64_t eh = std::llround(std::sqrt(frac * area * aspect));
    const int64_t ew = std::llround(std::sqrt(frac * area / aspect));
    if (eh < 1 || ew < 1 || eh > h || ew > w) continue;
    // rounding can push the realized fraction outside the configured range
    const double realized = static_cast<double>(eh * ew) / area;
    if (realized < lo || realized > hi) continue;
    const int64_t x0 = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(w - ew + 1)));
    const int64_t y0 = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(h - eh + 1)));
    std::vector<float> vals(t.values().begin(), t.values().end());
    for (int64_t c = 0; c < channels; ++c)
      for (int64_t y = y0; y < y0 + eh; ++y)
        for (int64_t x = x0; x < x0 + ew; ++x)
          vals[(static_cast<size_t>(c) * h + y) * w + x] = 0.0f;
    return Tensor::from(t.shape(), std::move(vals));
  }
  return t;
}

Tensor to_normalized(const ImageBuffer& img, const AugmentationProfile& profile) {
  Tensor t = unit_chw(img);
  standardize(t, profile);
  return t;
}

Tensor val_pipeline(const ImageBuffer& img, const AugmentationProfile& profile) {
  validate_profile(profile);
  return to_normalized(resize_bilinear(img, profile.crop_size, profile.crop_size), profile);
}

Tensor train_pipeline(const ImageBuffer& img, const AugmentationProfile& profile, uint64_t seed) {
  validate_profile(profile);
  RngStream rng(seed);

  ImageBuffer work = resize_bilinear(img, profile.resize_large, profile.resize_large);
  const int span = profile.resize_large - profile.crop_size + 1;
  const int cx = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(span)));
  const int cy = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(span)));
  work = crop(work, cx, cy, profile.crop_size, profile.crop_size);

  work = rand_augment(work, profile.randaugment_n, profile.randaugment_m, rng);
  work = affine_warp(work, rng.uniform(-profile.rotation_deg, profile.rotation_deg), 0.0, 1.0,
                     0.0, 0.0);
  work = affine_warp(work, 0.0, rng.uniform(-profile.shear_deg, profile.shear_deg),
                     rng.uniform(profile.scale_lo, profile.scale_hi), 0.0, 0.0);

  // jitter factors of exactly 1 are skipped so a zero-jitter profile stays
  // bit-identical to the validation path
  const double b = rng.uniform(1.0 - profile.brightness_jitter, 1.0 + profile.brightness_jitter);
  const double c = rng.uniform(1.0 - profile.contrast_jitter, 1.0 + profile.contrast_jitter);
  const double s = rng.uniform(1.0 - profile.saturation_jitter, 1.0 + profile.saturation_jitter);
  const double hue = rng.uniform(-profile.hue_jitter, profile.hue_jitter);
  if (b != 1.0) work = adjust_brightness(work, b);
  if (c != 1.0) work = adjust_contrast(work, c);
  if (s != 1.0) work = adjust_saturation(work, s);
  if (hue != 0.0) work = adjust_hue(work, hue);

  if (rng.bernoulli(profile.p_hflip)) work = hflip(work);
  if (rng.bernoulli(profile.p_vflip)) work = vflip(work);
  if (rng.bernoulli(profile.p_blur))
    work = gaussian_blur(work, profile.blur_kernel, profile.blur_sigma);
  if (rng.bernoulli(profile.p_posterize)) work = posterize(work, profile.posterize_bits);

  Tensor t = unit_chw(work);
  t = random_erasing(t, profile.p_erase, profile.erase_scale_lo, profile.erase_scale_hi, rng);
  standardize(t, profile);
  return t;
}

std::vector<Tensor> tta_variants(const ImageBuffer& img, const AugmentationProfile& profile) {
  validate_profile(profile);
  const ImageBuffer base = resize_bilinear(img, profile.crop_size, profile.crop_size);

  // enlarged view: scale the crop size by the full-scale 256/224 ratio, then
  // cut the center back out
  const int large = static_cast<int>(std::lround(profile.crop_size * 256.0 / 224.0));
  ImageBuffer enlarged = resize_bilinear(img, large, large);
  const int off = (large - profile.crop_size) / 2;
  enlarged = crop(enlarged, off, off, profile.crop_size, profile.crop_size);

  std::vector<Tensor> out;
  out.reserve(5);
  out.push_back(to_normalized(base, profile));
  out.push_back(to_normalized(hflip(base), profile));
  out.push_back(to_normalized(vflip(base), profile));
  out.push_back(to_normalized(enlarged, profile));
  out.push_back(to_normalized(affine_warp(base, 10.0, 0.0, 1.0, 0.0, 0.0), profile));
  return out;
}

}  // namespace kdoct
