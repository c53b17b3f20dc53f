#include "fusionseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fusionseg/canny.hpp"
#include "fusionseg/png_io.hpp"
#include "fusionseg/rng.hpp"
#include "json.hpp"

namespace fusionseg {

namespace fs = std::filesystem;
using nlohmann::json;

void Dataset::validate() const {
  for (const auto& s : samples) {
    if (s.h < 1 || s.w < 1) throw ValidationError("Dataset: sample with empty shape");
    if (s.image.size() != static_cast<size_t>(s.h) * s.w ||
        s.labels.h != s.h || s.labels.w != s.w || s.labels.n != 1 ||
        s.canny.h != s.h || s.canny.w != s.w ||
        s.edge_label.h != s.h || s.edge_label.w != s.w)
      throw ValidationError("Dataset: sample elements must share HxW");
  }
}

EdgeMap derive_edge_label(const LabelMap& labels) {
  if (labels.n != 1) throw ValidationError("derive_edge_label: expected a 2-d LabelMap");
  int h = labels.h, w = labels.w;
  EdgeMap out;
  out.h = h;
  out.w = w;
  out.kind = EdgeMap::Kind::edge_label;
  out.values.assign(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t c = labels.at(0, y, x);
      if (c == 0) continue;
      bool boundary = (y > 0 && labels.at(0, y - 1, x) != c) ||
                      (y < h - 1 && labels.at(0, y + 1, x) != c) ||
                      (x > 0 && labels.at(0, y, x - 1) != c) ||
                      (x < w - 1 && labels.at(0, y, x + 1) != c);
      if (boundary) out.values[static_cast<size_t>(y) * w + x] = 1.0;
    }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double ratio, uint64_t seed) {
  if (ds.samples.empty()) throw ValidationError("split_dataset: empty dataset");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split_dataset: ratio must be in (0,1)");
  std::vector<size_t> idx(ds.samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = Rng::stream(seed, "shuffle");
  rng.shuffle(idx);
  size_t n_train = static_cast<size_t>(
      std::llround(ratio * static_cast<double>(ds.samples.size())));
  n_train = std::min(n_train, ds.samples.size());
  Dataset train, test;
  train.split_tag = "train";
  test.split_tag = "test";
  for (size_t i = 0; i < idx.size(); ++i)
    (i < n_train ? train : test).samples.push_back(ds.samples[idx[i]]);
  return {std::move(train), std::move(test)};
}

Dataset make_dataset(const ImageVolume& volume, const LabelMap& labels) {
  if (labels.n != volume.n || labels.h != volume.h || labels.w != volume.w)
    throw ValidationError("make_dataset: labels do not match the volume shape");
  Dataset ds;
  for (int z = 0; z < volume.n; ++z) {
    Sample s;
    s.h = volume.h;
    s.w = volume.w;
    s.image = volume_slice(volume, z);
    s.labels = labels.slice(z);
    s.canny = canny_edges_default(s.image, s.h, s.w);
    s.edge_label = derive_edge_label(s.labels);
    s.volume_id = volume.id;
    s.slice_index = z;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

namespace {
std::string slice_name(int z) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slice_%04d.png", z);
  return buf;
}
std::string label_name(int z) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "label_%04d.png", z);
  return buf;
}
}  // namespace

void save_volume(const std::string& root, const ImageVolume& volume, const LabelMap& labels,
                 const PhantomSpec* spec) {
  volume.validate();
  labels.validate();
  if (labels.n != volume.n || labels.h != volume.h || labels.w != volume.w)
    throw ValidationError("save_volume: labels do not match the volume shape");
  fs::path dir = fs::path(root) / volume.id;
  fs::create_directories(dir);
  for (int z = 0; z < volume.n; ++z) {
    write_png_gray16((dir / slice_name(z)).string(), volume.h, volume.w, volume_slice(volume, z));
    std::vector<uint8_t> lab(labels.labels.begin() + static_cast<size_t>(z) * volume.h * volume.w,
                             labels.labels.begin() + static_cast<size_t>(z + 1) * volume.h * volume.w);
    write_png_gray8((dir / label_name(z)).string(), volume.h, volume.w, lab);
  }
  json meta;
  meta["spacing"] = {volume.dz, volume.dy, volume.dx};
  meta["seed"] = spec ? spec->seed : 0;
  meta["n_slices"] = volume.n;
  meta["num_classes"] = labels.num_classes;
  if (spec) meta["spec"] = to_json(*spec);
  std::ofstream f(dir / "meta.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  f << meta.dump(2) << "\n";
}

std::pair<ImageVolume, LabelMap> load_volume(const std::string& dir) {
  fs::path d(dir);
  if (!fs::is_directory(d)) throw ValidationError("load_volume: not a directory: " + dir);
  std::ifstream mf(d / "meta.json");
  if (!mf) throw ValidationError("load_volume: missing meta.json in " + dir);
  json meta = json::parse(mf);

  ImageVolume vol;
  vol.id = d.filename().string();
  auto spacing = meta.at("spacing");
  vol.dz = spacing.at(0).get<double>();
  vol.dy = spacing.at(1).get<double>();
  vol.dx = spacing.at(2).get<double>();
  int n = meta.at("n_slices").get<int>();

  LabelMap labels;
  labels.num_classes = meta.value("num_classes", 3);
  for (int z = 0; z < n; ++z) {
    int h = 0, w = 0;
    std::vector<double> img = read_png_gray16((d / slice_name(z)).string(), h, w);
    if (z == 0) {
      vol.n = n;
      vol.h = h;
      vol.w = w;
      vol.voxels.reserve(static_cast<size_t>(n) * h * w);
      labels.n = n;
      labels.h = h;
      labels.w = w;
      labels.labels.reserve(static_cast<size_t>(n) * h * w);
    } else if (h != vol.h || w != vol.w) {
      throw ValidationError(cat("load_volume: slice ", z, " has mismatched size in ", dir));
    }
    vol.voxels.insert(vol.voxels.end(), img.begin(), img.end());
    int lh = 0, lw = 0;
    std::vector<uint8_t> lab = read_png_gray8((d / label_name(z)).string(), lh, lw);
    if (lh != h || lw != w) throw ValidationError(cat("load_volume: label ", z, " size mismatch"));
    labels.labels.insert(labels.labels.end(), lab.begin(), lab.end());
  }
  vol.validate();
  labels.validate();
  return {std::move(vol), std::move(labels)};
}

Dataset load_dataset_dir(const std::string& root) {
  if (!fs::is_directory(root)) throw ValidationError("load_dataset_dir: not a directory: " + root);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ValidationError("load_dataset_dir: no volume directories in " + root);
  Dataset ds;
  for (const auto& dir : dirs) {
    auto [vol, labels] = load_volume(dir);
    Dataset part = make_dataset(vol, labels);
    ds.samples.insert(ds.samples.end(), part.samples.begin(), part.samples.end());
  }
  return ds;
}

}  // namespace fusionseg
