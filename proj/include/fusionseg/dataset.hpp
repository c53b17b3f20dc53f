#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fusionseg/config.hpp"
#include "fusionseg/image.hpp"

namespace fusionseg {

// One training unit: a slice with its annotation, the Canny map derived from
// the slice, and the binary boundary labels derived from the annotation.
// Canny and edge labels are always computed on the fly, never persisted.
struct Sample {
  int h = 0, w = 0;
  std::vector<double> image;  // [h][w] in [0,1]
  LabelMap labels;            // n == 1
  EdgeMap canny;
  EdgeMap edge_label;
  std::string volume_id;
  int slice_index = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string split_tag = "train";

  void validate() const;
};

// Boundary pixels of the foreground classes: 1 iff the pixel's class is
// nonzero and some in-bounds 4-neighbor has a different class. The image
// border itself is not a transition (clamped neighborhood).
EdgeMap derive_edge_label(const LabelMap& labels);

// Deterministic shuffle + partition; |train| = round(ratio * n).
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double ratio, uint64_t seed);

// Assemble per-slice samples from a volume and its labels.
Dataset make_dataset(const ImageVolume& volume, const LabelMap& labels);

// On-disk layout: <root>/<volume_id>/slice_####.png (16-bit gray),
// label_####.png (8-bit), meta.json {spacing, seed, spec}.
void save_volume(const std::string& root, const ImageVolume& volume, const LabelMap& labels,
                 const PhantomSpec* spec = nullptr);
std::pair<ImageVolume, LabelMap> load_volume(const std::string& dir);
Dataset load_dataset_dir(const std::string& root);

}  // namespace fusionseg
