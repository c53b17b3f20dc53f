#include "fusionseg/phantom.hpp"

#include <algorithm>

#include "fusionseg/rng.hpp"

namespace fusionseg {

namespace {

constexpr int64_t kS = kCurveSamples;
constexpr int64_t kS2 = kS * kS;

// Numerator of the Bezier point at t = k/S, in units of 1/S^2 voxels.
inline void bezier_num(const BezierTube& t, int64_t k, int64_t& bx, int64_t& by, int64_t& bz) {
  int64_t a = (kS - k) * (kS - k);
  int64_t b = 2 * k * (kS - k);
  int64_t c = k * k;
  bx = a * t.x0 + b * t.x1 + c * t.x2;
  by = a * t.y0 + b * t.y1 + c * t.y2;
  bz = a * t.z0 + b * t.z1 + c * t.z2;
}

}  // namespace

bool tube_contains(const BezierTube& t, int x, int y, int z) {
  int64_t r2 = static_cast<int64_t>(t.radius) * kS2;
  r2 *= r2;
  for (int64_t k = 0; k <= kS; ++k) {
    int64_t bx, by, bz;
    bezier_num(t, k, bx, by, bz);
    int64_t dx = static_cast<int64_t>(x) * kS2 - bx;
    int64_t dy = static_cast<int64_t>(y) * kS2 - by;
    int64_t dz = static_cast<int64_t>(z) * kS2 - bz;
    if (dx * dx + dy * dy + dz * dz <= r2) return true;
  }
  return false;
}

bool blob_contains(const EllipsoidBlob& b, int x, int y, int z) {
  int64_t dx = x - b.cx, dy = y - b.cy, dz = z - b.cz;
  int64_t yz = static_cast<int64_t>(b.ay) * b.az;
  int64_t xz = static_cast<int64_t>(b.ax) * b.az;
  int64_t xy = static_cast<int64_t>(b.ax) * b.ay;
  int64_t rhs = static_cast<int64_t>(b.ax) * b.ay * b.az;
  return dx * dx * yz * yz + dy * dy * xz * xz + dz * dz * xy * xy <= rhs * rhs;
}

PhantomGeometry phantom_geometry(const PhantomSpec& spec) {
  spec.validate();
  Rng geom = Rng::stream(spec.seed, "phantom.geom");
  PhantomGeometry g;

  int h = spec.height, w = spec.width, n = spec.n_slices;
  // Tumor sits in the central half so the full blob stays on canvas.
  EllipsoidBlob blob;
  blob.ax = geom.uniform_int(spec.tumor_radius_min, spec.tumor_radius_max);
  blob.ay = geom.uniform_int(spec.tumor_radius_min, spec.tumor_radius_max);
  blob.az = std::max(1, std::min((n - 1) / 2 + 1,
                                 geom.uniform_int(spec.tumor_radius_min, spec.tumor_radius_max)));
  blob.cx = geom.uniform_int(blob.ax, std::max(blob.ax, w - 1 - blob.ax));
  blob.cy = geom.uniform_int(blob.ay, std::max(blob.ay, h - 1 - blob.ay));
  blob.cz = geom.uniform_int(0, n - 1);
  g.blob = blob;

  for (int v = 0; v < spec.n_vessels; ++v) {
    BezierTube t;
    t.radius = geom.uniform_int(spec.vessel_radius_min, spec.vessel_radius_max);
    t.x0 = geom.uniform_int(0, w - 1);
    t.y0 = geom.uniform_int(0, h - 1);
    t.z0 = geom.uniform_int(0, n - 1);
    t.x1 = geom.uniform_int(0, w - 1);
    t.y1 = geom.uniform_int(0, h - 1);
    t.z1 = geom.uniform_int(0, n - 1);
    t.x2 = geom.uniform_int(0, w - 1);
    t.y2 = geom.uniform_int(0, h - 1);
    t.z2 = geom.uniform_int(0, n - 1);
    g.tubes.push_back(t);
  }
  return g;
}

std::pair<ImageVolume, LabelMap> generate_phantom(const PhantomSpec& spec) {
  PhantomGeometry geom = phantom_geometry(spec);
  int h = spec.height, w = spec.width, n = spec.n_slices;

  LabelMap labels;
  labels.n = n;
  labels.h = h;
  labels.w = w;
  labels.num_classes = 3;
  labels.labels.assign(static_cast<size_t>(n) * h * w, 0);

  // Tumor first, vessels override (thin structures win on overlap).
  {
    const EllipsoidBlob& b = geom.blob;
    for (int z = std::max(0, b.cz - b.az); z <= std::min(n - 1, b.cz + b.az); ++z)
      for (int y = std::max(0, b.cy - b.ay); y <= std::min(h - 1, b.cy + b.ay); ++y)
        for (int x = std::max(0, b.cx - b.ax); x <= std::min(w - 1, b.cx + b.ax); ++x)
          if (blob_contains(b, x, y, z)) labels.at(z, y, x) = 1;
  }
  for (const BezierTube& t : geom.tubes) {
    // Stamp a ball at every sampled curve point; tube_contains() evaluates the
    // identical predicate per pixel, so the two routes agree exactly.
    int64_t r2 = static_cast<int64_t>(t.radius) * kS * kS;
    r2 *= r2;
    for (int64_t k = 0; k <= kS; ++k) {
      int64_t a = (kS - k) * (kS - k), bq = 2 * k * (kS - k), c = k * k;
      int64_t bx = a * t.x0 + bq * t.x1 + c * t.x2;
      int64_t by = a * t.y0 + bq * t.y1 + c * t.y2;
      int64_t bz = a * t.z0 + bq * t.z1 + c * t.z2;
      int cx = static_cast<int>(bx / (kS * kS)), cy = static_cast<int>(by / (kS * kS)),
          cz = static_cast<int>(bz / (kS * kS));
      int r = t.radius + 1;
      for (int z = std::max(0, cz - r); z <= std::min(n - 1, cz + r); ++z)
        for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r); ++y)
          for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r); ++x) {
            int64_t dx = static_cast<int64_t>(x) * kS * kS - bx;
            int64_t dy = static_cast<int64_t>(y) * kS * kS - by;
            int64_t dz = static_cast<int64_t>(z) * kS * kS - bz;
            if (dx * dx + dy * dy + dz * dz <= r2) labels.at(z, y, x) = 2;
          }
    }
  }

  ImageVolume vol;
  vol.id = cat("phantom_", spec.seed);
  vol.n = n;
  vol.h = h;
  vol.w = w;
  vol.dz = 1.0;
  vol.dy = 0.7;
  vol.dx = 0.7;
  vol.voxels.assign(static_cast<size_t>(n) * h * w, 0.0);

  // Smooth background field: coarse grid, bilinear interpolation.
  Rng noise = Rng::stream(spec.seed, "phantom.noise");
  constexpr int kGrid = 5;
  std::vector<double> coarse(static_cast<size_t>(kGrid) * kGrid);
  for (auto& c : coarse) c = noise.uniform(-0.08, 0.08);
  auto field = [&](int y, int x) {
    double fy = (h == 1) ? 0.0 : static_cast<double>(y) / (h - 1) * (kGrid - 1);
    double fx = (w == 1) ? 0.0 : static_cast<double>(x) / (w - 1) * (kGrid - 1);
    int y0 = std::min(static_cast<int>(fy), kGrid - 2);
    int x0 = std::min(static_cast<int>(fx), kGrid - 2);
    double wy = fy - y0, wx = fx - x0;
    return (1 - wy) * ((1 - wx) * coarse[static_cast<size_t>(y0) * kGrid + x0] +
                       wx * coarse[static_cast<size_t>(y0) * kGrid + x0 + 1]) +
           wy * ((1 - wx) * coarse[static_cast<size_t>(y0 + 1) * kGrid + x0] +
                 wx * coarse[static_cast<size_t>(y0 + 1) * kGrid + x0 + 1]);
  };

  for (int z = 0; z < n; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int cls = labels.at(z, y, x);
        double base = cls == 2 ? 0.85 : (cls == 1 ? 0.55 : 0.25 + field(y, x));
        double v = base + spec.noise_sigma * noise.normal();
        vol.at(z, y, x) = std::min(1.0, std::max(0.0, v));
      }

  vol.validate();
  labels.validate();
  return {std::move(vol), std::move(labels)};
}

}  // namespace fusionseg
