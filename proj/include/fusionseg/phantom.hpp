#pragma once

#include <utility>

#include "fusionseg/config.hpp"
#include "fusionseg/image.hpp"

namespace fusionseg {

// Synthetic stand-in for contrast CT: bright curvilinear vessel tubes
// (class 2) around one ellipsoidal tumor blob (class 1) on a textured
// background. Label rasterization is integer-only, so the class histogram is
// bit-identical across platforms for a fixed spec.
std::pair<ImageVolume, LabelMap> generate_phantom(const PhantomSpec& spec);

// The exact membership predicate used by the rasterizer, exposed so tests can
// re-rasterize pixel-by-pixel: is voxel (x,y,z) within radius r of the
// sampled quadratic Bezier curve given by integer control points (scaled by
// kCurveSamples^2)?
inline constexpr int kCurveSamples = 256;

struct BezierTube {
  // control points in voxel units
  int x0, y0, z0, x1, y1, z1, x2, y2, z2;
  int radius;
};

bool tube_contains(const BezierTube& t, int x, int y, int z);

struct EllipsoidBlob {
  int cx, cy, cz;
  int ax, ay, az;  // semi-axes, voxels
};

bool blob_contains(const EllipsoidBlob& b, int x, int y, int z);

// Geometry drawn for a spec; exposed for oracle-style verification.
struct PhantomGeometry {
  std::vector<BezierTube> tubes;
  EllipsoidBlob blob;
};

PhantomGeometry phantom_geometry(const PhantomSpec& spec);

}  // namespace fusionseg
