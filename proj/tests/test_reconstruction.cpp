#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fusionseg/reconstruction.hpp"
#include "fusionseg/rng.hpp"

using namespace fusionseg;
namespace fs = std::filesystem;

namespace {

LogitVolume onehot_logits(const std::vector<uint8_t>& labels, int n, int h, int w, int K = 3,
                          double gain = 10.0) {
  LogitVolume lv;
  lv.n = n;
  lv.k = K;
  lv.h = h;
  lv.w = w;
  lv.values.assign(static_cast<size_t>(n) * K * h * w, 0.0);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int c = labels[(static_cast<size_t>(z) * h + y) * w + x];
        lv.values[((static_cast<size_t>(z) * K + c) * h + y) * w + x] = gain;
      }
  return lv;
}

}  // namespace

TEST_CASE("sigma 0 reconstruction equals raw argmax exactly and is idempotent") {
  Rng rng(3);
  int n = 3, h = 6, w = 6;
  std::vector<uint8_t> labels(static_cast<size_t>(n) * h * w);
  for (auto& l : labels) l = static_cast<uint8_t>(rng.uniform_int(3));
  LogitVolume lv = onehot_logits(labels, n, h, w);
  ReconstructionResult res = reconstruct(lv, 0.0);
  CHECK(res.fused_labels.labels == labels);

  // applying the pipeline to the already-clean labels changes nothing
  LogitVolume again = onehot_logits(res.fused_labels.labels, n, h, w);
  CHECK(reconstruct(again, 0.0).fused_labels.labels == labels);
}

TEST_CASE("solid cube survives sigma 0 voxel-exactly") {
  int n = 5, h = 7, w = 7;
  std::vector<uint8_t> labels(static_cast<size_t>(n) * h * w, 0);
  for (int z = 1; z <= 3; ++z)
    for (int y = 2; y <= 4; ++y)
      for (int x = 2; x <= 4; ++x) labels[(static_cast<size_t>(z) * h + y) * w + x] = 1;
  ReconstructionResult res = reconstruct(onehot_logits(labels, n, h, w), 0.0);
  CHECK(res.fused_labels.labels == labels);
}

TEST_CASE("isolated voxel at sigma 1 is removed, matching the explicit kernel oracle") {
  int n = 9, h = 9, w = 9;
  std::vector<uint8_t> labels(static_cast<size_t>(n) * h * w, 0);
  labels[(static_cast<size_t>(4) * h + 4) * w + 4] = 1;
  ReconstructionResult res = reconstruct(onehot_logits(labels, n, h, w), 1.0);
  for (uint8_t l : res.fused_labels.labels) CHECK(l == 0);

  // oracle: value at the voxel itself is g(0)^3 of the normalized 1-d kernel
  int r = 3;
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += std::exp(-0.5 * i * i);
  double g0 = 1.0 / s;
  CHECK(g0 * g0 * g0 < 0.5);
  std::vector<double> smoothed = gaussian_smooth_3d(labels, n, h, w, 1.0);
  CHECK(smoothed[(static_cast<size_t>(4) * h + 4) * w + 4] ==
        doctest::Approx(g0 * g0 * g0).epsilon(1e-12));
}

TEST_CASE("smoothing never creates foreground beyond the ceil(3 sigma) dilation") {
  Rng rng(5);
  int n = 6, h = 10, w = 10;
  std::vector<uint8_t> labels(static_cast<size_t>(n) * h * w, 0);
  for (int i = 0; i < 30; ++i)
    labels[rng.uniform_int(labels.size())] = 1;
  double sigma = 0.8;
  int r = static_cast<int>(std::ceil(3.0 * sigma));
  ReconstructionResult res = reconstruct(onehot_logits(labels, n, h, w, 2), sigma);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!res.per_class_masks[0][(static_cast<size_t>(z) * h + y) * w + x]) continue;
        bool near = false;
        for (int dz = -r; dz <= r && !near; ++dz)
          for (int dy = -r; dy <= r && !near; ++dy)
            for (int dx = -r; dx <= r && !near; ++dx) {
              int zz = z + dz, yy = y + dy, xx = x + dx;
              if (zz < 0 || zz >= n || yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              if (labels[(static_cast<size_t>(zz) * h + yy) * w + xx]) near = true;
            }
        CHECK(near);
      }
}

TEST_CASE("fuse_masks: partition, vessel precedence, histogram oracle") {
  int n = 2, h = 4, w = 4;
  size_t voxels = static_cast<size_t>(n) * h * w;
  std::vector<uint8_t> tumor(voxels, 0), vessel(voxels, 0);
  tumor[0] = tumor[5] = 1;
  vessel[5] = vessel[9] = 1;  // overlap at 5
  LabelMap fused = fuse_masks(tumor, vessel, n, h, w);
  CHECK(fused.labels[0] == 1);
  CHECK(fused.labels[5] == 2);  // vessel wins
  CHECK(fused.labels[9] == 2);
  CHECK(fused.labels[1] == 0);

  Rng rng(7);
  for (auto& v : tumor) v = rng.uniform() < 0.3;
  for (auto& v : vessel) v = rng.uniform() < 0.3;
  LabelMap f2 = fuse_masks(tumor, vessel, n, h, w);
  int64_t n0 = 0, n1 = 0, n2 = 0;
  for (uint8_t l : f2.labels) (l == 0 ? n0 : (l == 1 ? n1 : n2))++;
  int64_t expect2 = 0, expect1 = 0;
  for (size_t i = 0; i < voxels; ++i) {
    expect2 += vessel[i];
    expect1 += (tumor[i] && !vessel[i]);
  }
  CHECK(n2 == expect2);
  CHECK(n1 == expect1);
  CHECK(n0 + n1 + n2 == static_cast<int64_t>(voxels));

  CHECK_THROWS_AS(fuse_masks(tumor, std::vector<uint8_t>(3, 0), n, h, w), ShapeError);
}

TEST_CASE("nrrd: export -> import round trip is bit-exact, header contract holds") {
  Rng rng(11);
  ReconstructionResult res;
  res.fused_labels.n = 3;
  res.fused_labels.h = 5;
  res.fused_labels.w = 4;
  res.fused_labels.labels.assign(60, 0);
  for (auto& l : res.fused_labels.labels) l = static_cast<uint8_t>(rng.uniform_int(3));
  res.dz = 1.0;
  res.dy = 0.7;
  res.dx = 0.7;

  fs::path path = fs::temp_directory_path() / "fusionseg_test.nrrd";
  export_nrrd(res, path.string());

  std::ifstream f(path);
  std::string header((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(header.find("type: unsigned char") != std::string::npos);
  CHECK(header.find("dimension: 3") != std::string::npos);
  CHECK(header.find("encoding: raw") != std::string::npos);
  CHECK(header.find("sizes: 4 5 3") != std::string::npos);

  NrrdVolume back = import_nrrd(path.string());
  CHECK(back.n == 3);
  CHECK(back.h == 5);
  CHECK(back.w == 4);
  CHECK(back.data == res.fused_labels.labels);
  CHECK(back.dz == 1.0);  // spacing written with full precision, parsed back equal
  CHECK(back.dy == 0.7);
  CHECK(back.dx == 0.7);
  fs::remove(path);
}

TEST_CASE("nrrd gzip encoding round trips as well") {
  ReconstructionResult res;
  res.fused_labels.n = 2;
  res.fused_labels.h = 3;
  res.fused_labels.w = 3;
  res.fused_labels.labels = {0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 0, 1, 1, 1, 2, 2, 2, 0};
  fs::path path = fs::temp_directory_path() / "fusionseg_test_gz.nrrd";
  export_nrrd(res, path.string(), true);
  NrrdVolume back = import_nrrd(path.string());
  CHECK(back.data == res.fused_labels.labels);
  fs::remove(path);
}

TEST_CASE("predict_volume: slice count, determinism, and size mismatch hint") {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.backbone_base = 4;
  cfg.backbone_stages = 2;
  cfg.patch_size = 2;
  cfg.embed_dim = 8;
  cfg.n_heads = 2;
  cfg.mlp_dim = 16;
  cfg.depth = 1;
  cfg.local_base = 4;
  cfg.local_stages = 3;
  cfg.se_reduction = 2;
  cfg.edge_channels = 4;
  cfg.fusion_width = 8;
  cfg.skip_width = 4;
  cfg.decoder_base = 4;
  FusionNet net(cfg, 9);

  ImageVolume vol;
  vol.id = "v";
  vol.n = 2;
  vol.h = 32;
  vol.w = 32;
  vol.voxels.assign(2 * 32 * 32, 0.0);
  Rng rng(10);
  for (auto& v : vol.voxels) v = rng.uniform();

  LogitVolume a = predict_volume(net, vol);
  LogitVolume b = predict_volume(net, vol);
  CHECK(a.n == 2);
  CHECK(a.k == 3);
  CHECK(a.values == b.values);

  // per-pixel softmax over the logits sums to 1
  for (int z = 0; z < a.n; ++z)
    for (int p = 0; p < 5; ++p) {
      double m = std::max({a.at(z, 0, p, p), a.at(z, 1, p, p), a.at(z, 2, p, p)});
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += std::exp(a.at(z, c, p, p) - m);
      double total = 0.0;
      for (int c = 0; c < 3; ++c) total += std::exp(a.at(z, c, p, p) - m) / s;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }

  ImageVolume wrong = vol;
  wrong.h = 16;
  wrong.w = 16;
  wrong.voxels.assign(2 * 16 * 16, 0.0);
  CHECK_THROWS_WITH_AS(predict_volume(net, wrong), doctest::Contains("resample"), ShapeError);
}

TEST_CASE("two-model reconstruction takes tumor and vessel masks from their models") {
  // build two trivial 'models' worth of logits through the public pipeline:
  // verify the fusion rule using reconstruct() + fuse_masks directly
  int n = 2, h = 4, w = 4;
  std::vector<uint8_t> tl(static_cast<size_t>(n) * h * w, 0), vl = tl;
  tl[3] = 1;
  tl[7] = 1;
  vl[7] = 2;
  vl[12] = 2;
  ReconstructionResult tr = reconstruct(onehot_logits(tl, n, h, w), 0.0);
  ReconstructionResult vr = reconstruct(onehot_logits(vl, n, h, w), 0.0);
  LabelMap fused = fuse_masks(tr.per_class_masks[0], vr.per_class_masks[1], n, h, w);
  CHECK(fused.labels[3] == 1);
  CHECK(fused.labels[7] == 2);
  CHECK(fused.labels[12] == 2);
}
