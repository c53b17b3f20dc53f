#include "fusionseg/reconstruction.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fusionseg {

LogitVolume predict_volume(const FusionNet& model, const ImageVolume& volume) {
  volume.validate();
  if (volume.h != model.config().input_size || volume.w != model.config().input_size)
    throw ShapeError(cat("predict_volume: slices are ", volume.h, "x", volume.w,
                         " but the model expects ", model.config().input_size, "x",
                         model.config().input_size, "; resample the volume first"));
  LogitVolume out;
  out.n = volume.n;
  out.k = model.config().num_classes;
  out.h = volume.h;
  out.w = volume.w;
  out.values.reserve(static_cast<size_t>(out.n) * out.k * out.h * out.w);
  for (int z = 0; z < volume.n; ++z) {
    Tensor logits = model.forward_logits(volume_slice(volume, z), volume.h, volume.w);
    out.values.insert(out.values.end(), logits.values().begin(), logits.values().end());
  }
  return out;
}

std::vector<double> gaussian_smooth_3d(const std::vector<uint8_t>& mask, int n, int h, int w,
                                       double sigma) {
  std::vector<double> cur(mask.begin(), mask.end());
  if (sigma <= 0.0) return cur;
  int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kern(static_cast<size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) {
    kern[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += kern[static_cast<size_t>(i + r)];
  }
  for (auto& v : kern) v /= s;

  auto pass = [&](const std::vector<double>& src, int stride, int extent,
                  auto index) {
    std::vector<double> dst(src.size(), 0.0);
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int axis = index(z, y, x);
          double acc = 0.0;
          int64_t base = (static_cast<int64_t>(z) * h + y) * w + x;
          for (int i = -r; i <= r; ++i) {
            int a = axis + i;
            if (a < 0 || a >= extent) continue;  // zero padding
            acc += kern[static_cast<size_t>(i + r)] *
                   src[static_cast<size_t>(base + static_cast<int64_t>(i) * stride)];
          }
          dst[static_cast<size_t>(base)] = acc;
        }
    return dst;
  };

  cur = pass(cur, h * w, n, [](int z, int, int) { return z; });
  cur = pass(cur, w, h, [](int, int y, int) { return y; });
  cur = pass(cur, 1, w, [](int, int, int x) { return x; });
  return cur;
}

ReconstructionResult reconstruct(const LogitVolume& logits, double sigma) {
  if (sigma < 0.0) throw ValidationError("reconstruct: sigma must be >= 0");
  if (logits.k < 2) throw ValidationError("reconstruct: needs at least 2 classes");
  ReconstructionResult res;
  res.sigma = sigma;
  size_t voxels = static_cast<size_t>(logits.n) * logits.h * logits.w;

  // raw argmax labels
  std::vector<uint8_t> arg(voxels, 0);
  for (int z = 0; z < logits.n; ++z)
    for (int y = 0; y < logits.h; ++y)
      for (int x = 0; x < logits.w; ++x) {
        int best = 0;
        double bv = logits.at(z, 0, y, x);
        for (int c = 1; c < logits.k; ++c) {
          double v = logits.at(z, c, y, x);
          if (v > bv) {
            bv = v;
            best = c;
          }
        }
        arg[(static_cast<size_t>(z) * logits.h + y) * logits.w + x] = static_cast<uint8_t>(best);
      }

  for (int c = 1; c < logits.k; ++c) {
    std::vector<uint8_t> mask(voxels, 0);
    for (size_t i = 0; i < voxels; ++i) mask[i] = arg[i] == c;
    if (sigma > 0.0) {
      std::vector<double> sm = gaussian_smooth_3d(mask, logits.n, logits.h, logits.w, sigma);
      for (size_t i = 0; i < voxels; ++i) mask[i] = sm[i] >= 0.5;
    }
    res.per_class_masks.push_back(std::move(mask));
  }

  res.fused_labels.n = logits.n;
  res.fused_labels.h = logits.h;
  res.fused_labels.w = logits.w;
  res.fused_labels.num_classes = logits.k;
  res.fused_labels.labels.assign(voxels, 0);
  for (size_t i = 0; i < voxels; ++i) {
    for (int c = logits.k - 1; c >= 1; --c) {  // higher class wins (vessel over tumor)
      if (res.per_class_masks[static_cast<size_t>(c - 1)][i]) {
        res.fused_labels.labels[i] = static_cast<uint8_t>(c);
        break;
      }
    }
  }
  return res;
}

LabelMap fuse_masks(const std::vector<uint8_t>& tumor_mask, const std::vector<uint8_t>& vessel_mask,
                    int n, int h, int w) {
  size_t voxels = static_cast<size_t>(n) * h * w;
  if (tumor_mask.size() != voxels || vessel_mask.size() != voxels)
    throw ShapeError(cat("fuse_masks: mask sizes ", tumor_mask.size(), "/", vessel_mask.size(),
                         " do not match ", n, "x", h, "x", w));
  LabelMap out;
  out.n = n;
  out.h = h;
  out.w = w;
  out.num_classes = 3;
  out.labels.assign(voxels, 0);
  for (size_t i = 0; i < voxels; ++i)
    out.labels[i] = vessel_mask[i] ? 2 : (tumor_mask[i] ? 1 : 0);
  return out;
}

ReconstructionResult reconstruct_volume(const FusionNet& tumor_model,
                                        const FusionNet& vessel_model, const ImageVolume& volume,
                                        double sigma) {
  ReconstructionResult tumor_res = reconstruct(predict_volume(tumor_model, volume), sigma);
  ReconstructionResult vessel_res =
      &tumor_model == &vessel_model ? tumor_res
                                    : reconstruct(predict_volume(vessel_model, volume), sigma);
  ReconstructionResult res;
  res.sigma = sigma;
  res.dz = volume.dz;
  res.dy = volume.dy;
  res.dx = volume.dx;
  res.per_class_masks = {tumor_res.per_class_masks[0], vessel_res.per_class_masks[1]};
  res.fused_labels = fuse_masks(res.per_class_masks[0], res.per_class_masks[1], volume.n, volume.h,
                                volume.w);
  return res;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<uint8_t> gzip_bytes(const std::vector<uint8_t>& raw) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw std::runtime_error("deflateInit2 failed");
  std::vector<uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())));
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("gzip compression failed");
  out.resize(out.size() - zs.avail_out);
  return out;
}

std::vector<uint8_t> gunzip_bytes(const std::vector<uint8_t>& comp, size_t expect) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) throw std::runtime_error("inflateInit2 failed");
  std::vector<uint8_t> out(expect);
  zs.next_in = const_cast<Bytef*>(comp.data());
  zs.avail_in = static_cast<uInt>(comp.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("gzip decompression failed");
  if (zs.avail_out != 0) throw std::runtime_error("gzip payload shorter than the header sizes");
  return out;
}

}  // namespace

void export_nrrd(const ReconstructionResult& result, const std::string& path, bool gzip) {
  const LabelMap& lab = result.fused_labels;
  std::ostringstream header;
  header << "NRRD0004\n";
  header << "# fused segmentation labels (0 background, 1 tumor, 2 vessel)\n";
  header << "type: unsigned char\n";
  header << "dimension: 3\n";
  header << "space: left-posterior-superior\n";
  header << "sizes: " << lab.w << " " << lab.h << " " << lab.n << "\n";
  header << "space directions: (" << fmt_double(result.dx) << ",0,0) (0," << fmt_double(result.dy)
         << ",0) (0,0," << fmt_double(result.dz) << ")\n";
  header << "kinds: domain domain domain\n";
  header << "endian: little\n";
  header << "encoding: " << (gzip ? "gzip" : "raw") << "\n";
  header << "space origin: (0,0,0)\n";
  header << "\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write NRRD: " + path);
  std::string h = header.str();
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  if (gzip) {
    std::vector<uint8_t> comp = gzip_bytes(lab.labels);
    f.write(reinterpret_cast<const char*>(comp.data()), static_cast<std::streamsize>(comp.size()));
  } else {
    f.write(reinterpret_cast<const char*>(lab.labels.data()),
            static_cast<std::streamsize>(lab.labels.size()));
  }
  if (!f) throw std::runtime_error("NRRD write failed: " + path);
}

NrrdVolume import_nrrd(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open NRRD: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("NRRD", 0) != 0)
    throw ValidationError("not an NRRD file: " + path);

  NrrdVolume vol;
  std::string encoding = "raw";
  while (std::getline(f, line) && !line.empty()) {
    if (line[0] == '#') continue;
    auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    std::string val = line.substr(colon + 2);
    if (key == "type" && val != "unsigned char" && val != "uchar" && val != "uint8")
      throw ValidationError("unsupported NRRD type: " + val);
    if (key == "dimension" && val != "3") throw ValidationError("unsupported NRRD dimension: " + val);
    if (key == "sizes") {
      std::istringstream is(val);
      is >> vol.w >> vol.h >> vol.n;
    }
    if (key == "encoding") encoding = val;
    if (key == "space directions") {
      double m[3][3] = {};
      if (std::sscanf(val.c_str(), "(%lf,%lf,%lf) (%lf,%lf,%lf) (%lf,%lf,%lf)", &m[0][0], &m[0][1],
                      &m[0][2], &m[1][0], &m[1][1], &m[1][2], &m[2][0], &m[2][1], &m[2][2]) == 9) {
        vol.dx = m[0][0];
        vol.dy = m[1][1];
        vol.dz = m[2][2];
      }
    }
  }
  if (vol.n < 1 || vol.h < 1 || vol.w < 1) throw ValidationError("NRRD sizes missing: " + path);
  size_t voxels = static_cast<size_t>(vol.n) * vol.h * vol.w;
  std::vector<uint8_t> payload((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
  if (encoding == "raw") {
    if (payload.size() < voxels) throw ValidationError("truncated NRRD payload: " + path);
    payload.resize(voxels);
    vol.data = std::move(payload);
  } else if (encoding == "gzip") {
    vol.data = gunzip_bytes(payload, voxels);
  } else {
    throw ValidationError("unsupported NRRD encoding: " + encoding);
  }
  return vol;
}

}  // namespace fusionseg
