#include "mrreparam/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "mrreparam/random.hpp"

namespace mrreparam::phantom {

std::string to_string(Family family) {
  return family == Family::Standard ? "standard" : "shifted";
}

Family parse_family(const std::string& text) {
  if (text == "standard") return Family::Standard;
  if (text == "shifted") return Family::Shifted;
  throw InvalidArgument("unknown phantom family '" + text + "' (expected standard or shifted)");
}

std::vector<TissueClass> default_palette() {
  // Order must follow the Tissue enum.
  return {
      {"background", 0.0, 0.0, 0.0},
      {"csf", 4.2, 2.0, 1.0},
      {"gray_matter", 0.92, 0.10, 0.85},
      {"white_matter", 0.78, 0.09, 0.75},
      {"fat", 0.26, 0.08, 0.90},
      {"lesion", 1.2, 0.30, 0.95},
  };
}

std::vector<TissueClass> palette(Family family) {
  auto tissues = default_palette();
  if (family == Family::Shifted) {
    for (auto& t : tissues) {
      if (t.pd == 0.0) continue;
      t.t1_s = std::min(t.t1_s * 1.15, kT1Max);
      t.t2_s = std::min(t.t2_s * 1.15, kT2Max);
    }
  }
  return tissues;
}

std::vector<EllipsoidSpec> phantom_layout(std::uint64_t seed, const VolumeShape& shape) {
  if (shape.depth < 16 || shape.height < 16 || shape.width < 16) {
    throw InvalidArgument("phantom dims must be >= 16");
  }
  Rng rng(derive_seed(seed, {0x7068616eULL}));
  const std::array<double, 3> half{shape.depth / 2.0, shape.height / 2.0, shape.width / 2.0};
  const std::array<double, 3> mid{(shape.depth - 1) / 2.0, (shape.height - 1) / 2.0,
                                  (shape.width - 1) / 2.0};
  auto jitter = [&](double amount) { return 1.0 + rng.uniform(-amount, amount); };

  // Fractions of the half-extent along (z, y, x).
  std::array<double, 3> head{0.86 * jitter(0.04), 0.84 * jitter(0.04), 0.78 * jitter(0.04)};
  std::array<double, 3> offset{rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                               rng.uniform(-0.02, 0.02)};
  const double head_angle = rng.uniform(-0.15, 0.15);

  auto make = [&](const std::array<double, 3>& frac, const std::array<double, 3>& off,
                  double angle, std::uint8_t tissue) {
    EllipsoidSpec e;
    for (std::size_t a = 0; a < 3; ++a) {
      e.center[a] = mid[a] + off[a] * half[a];
      e.semi_axes[a] = std::max(1.5, frac[a] * half[a]);
    }
    e.angle = angle;
    e.tissue = tissue;
    return e;
  };
  auto scaled = [&](double s) {
    return std::array<double, 3>{head[0] * s, head[1] * s, head[2] * s};
  };

  std::vector<EllipsoidSpec> specs;
  specs.push_back(make(head, offset, head_angle, kFat));
  specs.push_back(make(scaled(0.93), offset, head_angle, kCsf));
  specs.push_back(make(scaled(0.87), offset, head_angle, kGrayMatter));
  const double wm_scale = 0.68 * jitter(0.05);
  specs.push_back(make(scaled(wm_scale), offset, head_angle + rng.uniform(-0.1, 0.1), kWhiteMatter));

  // Lateral ventricles.
  const double spread = rng.uniform(0.10, 0.16);
  const std::array<double, 3> vent{0.22 * jitter(0.15), 0.20 * jitter(0.15), 0.07 * jitter(0.15)};
  for (double side : {-1.0, 1.0}) {
    std::array<double, 3> off{offset[0], offset[1] - 0.05, offset[2] + side * spread};
    specs.push_back(make(vent, off, head_angle + side * rng.uniform(0.15, 0.35), kCsf));
  }

  const auto lesions = rng.below(4);
  for (std::uint64_t i = 0; i < lesions; ++i) {
    const double r = rng.uniform(0.05, 0.10);
    std::array<double, 3> off{offset[0] + rng.uniform(-0.4, 0.4) * head[0] * wm_scale,
                              offset[1] + rng.uniform(-0.4, 0.4) * head[1] * wm_scale,
                              offset[2] + rng.uniform(-0.4, 0.4) * head[2] * wm_scale};
    specs.push_back(make({r, r * jitter(0.3), r * jitter(0.3)}, off, rng.uniform(0.0, 3.14159),
                         kLesion));
  }
  return specs;
}

namespace {

void paint(std::vector<std::uint8_t>& labels, const VolumeShape& shape, const EllipsoidSpec& e) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double reach = std::max({e.semi_axes[0], e.semi_axes[1], e.semi_axes[2]}) + 1.0;
  auto lo = [&](std::size_t a, std::int64_t n) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(e.center[a] - reach)), 0, n - 1);
  };
  auto hi = [&](std::size_t a, std::int64_t n) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(e.center[a] + reach)), 0, n - 1);
  };
  const auto z0 = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(e.center[0] - e.semi_axes[0] - 1)), 0, shape.depth - 1);
  const auto z1 = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::ceil(e.center[0] + e.semi_axes[0] + 1)), 0, shape.depth - 1);
  for (std::int64_t z = z0; z <= z1; ++z) {
    const double dz = (z - e.center[0]) / e.semi_axes[0];
    for (std::int64_t y = lo(1, shape.height); y <= hi(1, shape.height); ++y) {
      for (std::int64_t x = lo(2, shape.width); x <= hi(2, shape.width); ++x) {
        const double py = y - e.center[1], px = x - e.center[2];
        const double ry = (c * py - s * px) / e.semi_axes[1];
        const double rx = (s * py + c * px) / e.semi_axes[2];
        if (dz * dz + ry * ry + rx * rx <= 1.0) {
          labels[static_cast<std::size_t>((z * shape.height + y) * shape.width + x)] = e.tissue;
        }
      }
    }
  }
}

}  // namespace

PhantomVolume generate_phantom(std::uint64_t seed, const VolumeShape& shape, Family family) {
  const auto specs = phantom_layout(seed, shape);
  PhantomVolume vol;
  vol.shape = shape;
  vol.palette = palette(family);
  vol.labels.assign(static_cast<std::size_t>(shape.depth * shape.height * shape.width), kBackground);
  for (const auto& e : specs) paint(vol.labels, shape, e);

  const Shape dims{shape.depth, shape.height, shape.width};
  vol.t1 = Tensor(dims);
  vol.t2 = Tensor(dims);
  vol.pd = Tensor(dims);
  for (std::size_t i = 0; i < vol.labels.size(); ++i) {
    const auto& t = vol.palette[vol.labels[i]];
    vol.t1[i] = static_cast<float>(t.t1_s);
    vol.t2[i] = static_cast<float>(t.t2_s);
    vol.pd[i] = static_cast<float>(t.pd);
  }
  return vol;
}

std::vector<double> tissue_fractions(const PhantomVolume& volume) {
  std::vector<double> out(volume.palette.size(), 0.0);
  for (auto l : volume.labels) out[l] += 1.0;
  for (auto& v : out) v /= static_cast<double>(volume.labels.size());
  return out;
}

std::vector<std::int64_t> axial_slice_indices(std::int64_t depth, std::int64_t count) {
  if (count < 1 || count > depth) {
    throw InvalidArgument("slice count " + std::to_string(count) + " must be in [1, " +
                          std::to_string(depth) + "]");
  }
  double lo = 0.2 * static_cast<double>(depth);
  double span = 0.6 * static_cast<double>(depth);
  if (span / static_cast<double>(count) < 1.0) {
    lo = 0.0;
    span = static_cast<double>(depth);
  }
  std::vector<std::int64_t> out(static_cast<std::size_t>(count));
  for (std::int64_t k = 0; k < count; ++k) {
    out[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(
        std::floor(lo + span * (static_cast<double>(k) + 0.5) / static_cast<double>(count)));
  }
  return out;
}

std::vector<SliceMaps> extract_axial_slices(const PhantomVolume& volume, std::int64_t count) {
  const auto& s = volume.shape;
  std::vector<SliceMaps> out;
  const auto plane = s.height * s.width;
  for (auto z : axial_slice_indices(s.depth, count)) {
    SliceMaps m;
    m.index = z;
    auto take = [&](const Tensor& v) {
      const auto* begin = v.ptr() + z * plane;
      return Tensor(Shape{s.height, s.width}, std::vector<float>(begin, begin + plane));
    };
    m.t1 = take(volume.t1);
    m.t2 = take(volume.t2);
    m.pd = take(volume.pd);
    out.push_back(std::move(m));
  }
  return out;
}

Tensor resize_bilinear(const Tensor& map, std::int64_t size) {
  if (map.rank() != 2 || map.dim(0) < 2 || map.dim(1) < 2 || size < 2) {
    throw InvalidArgument("resize_bilinear needs a 2-D map with dims >= 2 and size >= 2, got " +
                          shape_str(map.shape()) + " -> " + std::to_string(size));
  }
  const auto h = map.dim(0), w = map.dim(1);
  Tensor out(Shape{size, size});
  const double sy = static_cast<double>(h - 1) / static_cast<double>(size - 1);
  const double sx = static_cast<double>(w - 1) / static_cast<double>(size - 1);
  for (std::int64_t i = 0; i < size; ++i) {
    const double fy = static_cast<double>(i) * sy;
    const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(fy), h - 2);
    const double ty = fy - static_cast<double>(y0);
    for (std::int64_t j = 0; j < size; ++j) {
      const double fx = static_cast<double>(j) * sx;
      const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(fx), w - 2);
      const double tx = fx - static_cast<double>(x0);
      const double top = (1.0 - tx) * map.at(y0, x0) + tx * map.at(y0, x0 + 1);
      const double bottom = (1.0 - tx) * map.at(y0 + 1, x0) + tx * map.at(y0 + 1, x0 + 1);
      out.at(i, j) = static_cast<float>((1.0 - ty) * top + ty * bottom);
    }
  }
  return out;
}

}  // namespace mrreparam::phantom
