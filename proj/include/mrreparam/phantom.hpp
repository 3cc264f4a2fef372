#pragma once

// Procedural nested-ellipsoid head phantoms: co-registered T1, T2 and PD volumes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mrreparam/tensor.hpp"

namespace mrreparam::phantom {

struct TissueClass {
  std::string label;
  double t1_s = 0.0;
  double t2_s = 0.0;
  double pd = 0.0;
};

inline constexpr double kT1Max = 4.5;
inline constexpr double kT2Max = 2.2;

/// Tissue indices of the shipped palettes.
enum Tissue : std::uint8_t { kBackground = 0, kCsf, kGrayMatter, kWhiteMatter, kFat, kLesion };

/// Palette family. `Shifted` scales every relaxation time by 1.15 (clamped to
/// the T1/T2 maxima) and stands in for an out-of-distribution scanner/subject.
enum class Family { Standard, Shifted };

std::string to_string(Family family);
Family parse_family(const std::string& text);

std::vector<TissueClass> default_palette();
std::vector<TissueClass> palette(Family family);

struct VolumeShape {
  std::int64_t depth = 108;
  std::int64_t height = 90;
  std::int64_t width = 90;
};

/// Axis-aligned ellipsoid in voxel coordinates (z, y, x), rotated by `angle`
/// radians about the axial (z) axis.
struct EllipsoidSpec {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
  double angle = 0.0;
  std::uint8_t tissue = kBackground;
};

struct PhantomVolume {
  VolumeShape shape;
  Tensor t1;  // [D,H,W] seconds
  Tensor t2;  // [D,H,W] seconds
  Tensor pd;  // [D,H,W]
  std::vector<std::uint8_t> labels;
  std::vector<TissueClass> palette;
};

/// Ellipsoids of one subject, in painting order.
std::vector<EllipsoidSpec> phantom_layout(std::uint64_t seed, const VolumeShape& shape);

PhantomVolume generate_phantom(std::uint64_t seed, const VolumeShape& shape = {},
                               Family family = Family::Standard);

/// Fraction of voxels carrying each palette label.
std::vector<double> tissue_fractions(const PhantomVolume& volume);

struct SliceMaps {
  std::int64_t index = 0;  // axial position in the volume
  Tensor t1;               // [H,W]
  Tensor t2;
  Tensor pd;
};

/// `count` strictly increasing axial indices, evenly spaced over the central
/// 60% of the volume (or the whole volume when the band is too thin).
std::vector<std::int64_t> axial_slice_indices(std::int64_t depth, std::int64_t count);

std::vector<SliceMaps> extract_axial_slices(const PhantomVolume& volume, std::int64_t count = 24);

/// Corner-aligned bilinear resampling of a 2-D map to size x size.
Tensor resize_bilinear(const Tensor& map, std::int64_t size);

}  // namespace mrreparam::phantom
