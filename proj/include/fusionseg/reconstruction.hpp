#pragma once

#include <string>
#include <vector>

#include "fusionseg/image.hpp"
#include "fusionseg/model/network.hpp"

namespace fusionseg {

struct LogitVolume {
  int n = 0, k = 0, h = 0, w = 0;
  std::vector<double> values;  // [n][k][h][w]

  double at(int z, int c, int y, int x) const {
    return values[((static_cast<size_t>(z) * k + c) * h + y) * w + x];
  }
};

// Slice-wise inference over the volume, deterministic order.
LogitVolume predict_volume(const FusionNet& model, const ImageVolume& volume);

struct ReconstructionResult {
  LabelMap fused_labels;                            // [n][h][w], vessel over tumor
  std::vector<std::vector<uint8_t>> per_class_masks;  // classes 1..K-1, binary
  double sigma = 0.0;
  double dz = 1.0, dy = 1.0, dx = 1.0;
  std::vector<std::string> provenance;  // model/checkpoint digests
};

// Per-class smooth-then-threshold label cleanup: argmax, then each foreground
// mask convolved with a normalized 3D Gaussian (radius ceil(3*sigma), zero
// padding) and re-thresholded at 0.5. sigma == 0 is exactly the raw argmax.
ReconstructionResult reconstruct(const LogitVolume& logits, double sigma);

// label 2 where vessel, else 1 where tumor, else 0
LabelMap fuse_masks(const std::vector<uint8_t>& tumor_mask, const std::vector<uint8_t>& vessel_mask,
                    int n, int h, int w);

// Two-phase workflow: the tumor mask comes from one model, the vessel mask
// from the other (they may be the same model).
ReconstructionResult reconstruct_volume(const FusionNet& tumor_model,
                                        const FusionNet& vessel_model, const ImageVolume& volume,
                                        double sigma);

// Native NRRD: text header plus raw (optionally gzip) uint8 payload, sizes
// fastest-axis-first, space directions from the voxel spacing.
void export_nrrd(const ReconstructionResult& result, const std::string& path, bool gzip = false);

struct NrrdVolume {
  int n = 0, h = 0, w = 0;
  double dz = 1.0, dy = 1.0, dx = 1.0;
  std::vector<uint8_t> data;
};
NrrdVolume import_nrrd(const std::string& path);

// Normalized separable Gaussian smoothing of a binary mask, exposed for the
// reconstruction contract checks.
std::vector<double> gaussian_smooth_3d(const std::vector<uint8_t>& mask, int n, int h, int w,
                                       double sigma);

}  // namespace fusionseg
