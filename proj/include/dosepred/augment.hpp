#pragma once

#include <array>
#include <cstdint>

#include "dosepred/rng.hpp"
#include "dosepred/volume.hpp"

namespace dosepred {

/// Sampled augmentation parameters. Draw order from one RandomStream:
///   3x flip decision (p=0.5 per axis), shear decision (p=0.2) then 3 shear
///   coefficients in [-0.1, 0.1] when applied, zoom decision (p=0.5) then
///   factor in [0.9, 1.3], smooth decision (p=0.2) then sigma in [0.25, 1.5]
///   voxels, contrast decision (p=0.2) then gamma in [0.5, 2.0].
struct AugmentParams {
  std::array<bool, 3> flip{false, false, false};
  bool apply_shear = false;
  std::array<double, 3> shear{0.0, 0.0, 0.0};  // xy, xz, yz coefficients
  bool apply_zoom = false;
  double zoom = 1.0;
  bool apply_smooth = false;
  double smooth_sigma = 1.0;  // in voxels
  bool apply_contrast = false;
  double contrast_gamma = 1.0;
};

AugmentParams sample_augment_params(RandomStream& rng);

/// Geometric transforms (flip, shear, zoom) act identically on CT, dose,
/// structure masks and the possible-dose mask with nearest-neighbor sampling
/// and zero padding; smoothing and contrast act on the CT only. Output shape
/// always equals input shape; masks stay binary.
PreparedPatient apply_augment(const PreparedPatient& p, const AugmentParams& a);

PreparedPatient augment(const PreparedPatient& p, std::uint64_t seed);

// individual transforms, exposed for direct testing
Grid3 flip_grid(const Grid3& g, const std::array<bool, 3>& axes);
Grid3 shear_grid(const Grid3& g, const std::array<double, 3>& shear);
Grid3 zoom_grid(const Grid3& g, double factor);
Grid3 gaussian_smooth(const Grid3& g, double sigma);
Grid3 adjust_contrast(const Grid3& g, double gamma);

}  // namespace dosepred
