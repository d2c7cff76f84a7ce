#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "kdoct/image.hpp"
#include "kdoct/rng.hpp"
#include "kdoct/tensor.hpp"

namespace kdoct {

// Augmentation knobs for one pipeline. Defaults are the heavy training
// profile at desk-scale dimensions.
struct AugmentationProfile {
  int resize_large = 40;
  int crop_size = 32;
  int randaugment_n = 2;
  int randaugment_m = 9;      // in [0,10]
  double rotation_deg = 20.0;
  double shear_deg = 10.0;
  double scale_lo = 0.9, scale_hi = 1.1;
  double brightness_jitter = 0.2;
  double contrast_jitter = 0.2;
  double saturation_jitter = 0.2;
  double hue_jitter = 0.05;
  double p_hflip = 0.5, p_vflip = 0.5;
  double p_blur = 0.2;
  double p_posterize = 0.2;
  double p_erase = 0.25;
  double erase_scale_lo = 0.02, erase_scale_hi = 0.1;
  int posterize_bits = 4;
  int blur_kernel = 3;
  double blur_sigma = 0.8;
  std::array<double, 3> norm_mean = {0.485, 0.456, 0.406};
  std::array<double, 3> norm_std = {0.229, 0.224, 0.225};
};

void validate_profile(const AugmentationProfile& p);

// heavy pipeline: RandAugment N=2 M=9, rotations up to 20 degrees
AugmentationProfile teacher_augment_profile();
// light pipeline: M=7, rotations up to 15 degrees, no blur or posterize
AugmentationProfile student_augment_profile();

// per-sample stream so parallel execution cannot change results
uint64_t sample_seed(uint64_t global_seed, int64_t epoch, int64_t sample_index);

// n ops sampled with replacement from {brightness, contrast, saturation,
// sharpness, rotation, translation}; magnitude m in [0,10] maps linearly to
// each op's range with identity at 0, random sign per application.
ImageBuffer rand_augment(const ImageBuffer& img, int n, int m, RngStream& rng);

// with probability p, zeroes one rectangle of the CHW float tensor whose
// area fraction falls in [lo, hi] and aspect ratio in [1/3, 3]
Tensor random_erasing(Tensor t, double p, double lo, double hi, RngStream& rng);

// geometric distortion step used by the pipelines (see image.hpp)
inline ImageBuffer geometric_affine(const ImageBuffer& img, double angle_deg, double shear_deg,
                                    double scale, double tx = 0.0, double ty = 0.0) {
  return affine_warp(img, angle_deg, shear_deg, scale, tx, ty);
}

// crop-sized uint8 image -> float CHW in [0,1] -> replicate grayscale to 3
// channels -> per-channel standardization. Shared tail of every pipeline.
Tensor to_normalized(const ImageBuffer& img, const AugmentationProfile& profile);

// deterministic: resize straight to crop_size, then normalize
Tensor val_pipeline(const ImageBuffer& img, const AugmentationProfile& profile);

// full stochastic chain; bit-identical for equal (image, profile, seed)
Tensor train_pipeline(const ImageBuffer& img, const AugmentationProfile& profile, uint64_t seed);

// exactly 5 deterministic views: val, hflip, vflip, enlarge+center-crop,
// small rotation; each normalized
std::vector<Tensor> tta_variants(const ImageBuffer& img, const AugmentationProfile& profile);

}  // namespace kdoct
