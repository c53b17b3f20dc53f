#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fusionseg/common.hpp"

namespace fusionseg {

// Stack of grayscale slices in [0,1] with voxel spacing in millimeters.
struct ImageVolume {
  std::string id;
  int n = 0, h = 0, w = 0;
  std::vector<double> voxels;  // [n][h][w]
  double dz = 1.0, dy = 1.0, dx = 1.0;

  double& at(int z, int y, int x) { return voxels[(static_cast<size_t>(z) * h + y) * w + x]; }
  double at(int z, int y, int x) const { return voxels[(static_cast<size_t>(z) * h + y) * w + x]; }

  void validate() const {
    if (n < 1 || h < 1 || w < 1)
      throw ValidationError(cat("ImageVolume '", id, "': dimensions must be >= 1"));
    if (voxels.size() != static_cast<size_t>(n) * h * w)
      throw ValidationError(cat("ImageVolume '", id, "': voxel count mismatch"));
    if (dz <= 0 || dy <= 0 || dx <= 0)
      throw ValidationError(cat("ImageVolume '", id, "': spacing components must be > 0"));
    for (double v : voxels)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw ValidationError(cat("ImageVolume '", id, "': intensities must be finite in [0,1]"));
  }
};

// Per-pixel class indices; n == 1 holds a single slice.
struct LabelMap {
  int n = 0, h = 0, w = 0;
  int num_classes = 3;
  std::vector<uint8_t> labels;  // [n][h][w]

  uint8_t& at(int z, int y, int x) { return labels[(static_cast<size_t>(z) * h + y) * w + x]; }
  uint8_t at(int z, int y, int x) const { return labels[(static_cast<size_t>(z) * h + y) * w + x]; }

  void validate() const {
    if (n < 1 || h < 1 || w < 1) throw ValidationError("LabelMap: dimensions must be >= 1");
    if (labels.size() != static_cast<size_t>(n) * h * w)
      throw ValidationError("LabelMap: label count mismatch");
    for (uint8_t l : labels)
      if (l >= num_classes)
        throw ValidationError(cat("LabelMap: class index ", int(l), " >= K=", num_classes));
  }

  LabelMap slice(int z) const {
    LabelMap s;
    s.n = 1;
    s.h = h;
    s.w = w;
    s.num_classes = num_classes;
    s.labels.assign(labels.begin() + static_cast<size_t>(z) * h * w,
                    labels.begin() + static_cast<size_t>(z + 1) * h * w);
    return s;
  }
};

struct EdgeMap {
  enum class Kind { canny_input, edge_label, edge_prediction };
  int h = 0, w = 0;
  std::vector<double> values;  // [h][w] in [0,1]
  Kind kind = Kind::canny_input;

  double& at(int y, int x) { return values[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return values[static_cast<size_t>(y) * w + x]; }

  void validate() const {
    if (h < 1 || w < 1) throw ValidationError("EdgeMap: dimensions must be >= 1");
    if (values.size() != static_cast<size_t>(h) * w)
      throw ValidationError("EdgeMap: value count mismatch");
    for (double v : values) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("EdgeMap: values must lie in [0,1]");
      if (kind == Kind::edge_label && v != 0.0 && v != 1.0)
        throw ValidationError("EdgeMap: edge labels must be binary");
    }
  }
};

inline std::vector<double> volume_slice(const ImageVolume& v, int z) {
  return {v.voxels.begin() + static_cast<size_t>(z) * v.h * v.w,
          v.voxels.begin() + static_cast<size_t>(z + 1) * v.h * v.w};
}

}  // namespace fusionseg
