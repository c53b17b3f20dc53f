#include "fusionseg/canny.hpp"

#include <algorithm>
#include <cmath>

namespace fusionseg {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

std::vector<double> gaussian_smooth(const std::vector<double>& img, int h, int w, double sigma) {
  if (sigma <= 0.0) return img;
  int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[static_cast<size_t>(i + r)];
  }
  for (auto& v : k) v /= s;

  std::vector<double> tmp(img.size()), out(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * img[static_cast<size_t>(y) * w + clampi(x + i, 0, w - 1)];
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(clampi(y + i, 0, h - 1)) * w + x];
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  return out;
}

void sobel(const std::vector<double>& img, int h, int w, std::vector<double>& gx,
           std::vector<double>& gy) {
  gx.assign(img.size(), 0.0);
  gy.assign(img.size(), 0.0);
  auto at = [&](int y, int x) {
    return img[static_cast<size_t>(clampi(y, 0, h - 1)) * w + clampi(x, 0, w - 1)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double a = at(y - 1, x - 1), b = at(y - 1, x), c = at(y - 1, x + 1);
      double d = at(y, x - 1), f = at(y, x + 1);
      double g = at(y + 1, x - 1), hh = at(y + 1, x), i = at(y + 1, x + 1);
      gx[static_cast<size_t>(y) * w + x] = (c + 2 * f + i) - (a + 2 * d + g);
      gy[static_cast<size_t>(y) * w + x] = (g + 2 * hh + i) - (a + 2 * b + c);
    }
}

}  // namespace

std::vector<double> gradient_magnitude(const std::vector<double>& image, int h, int w,
                                       double sigma) {
  std::vector<double> sm = gaussian_smooth(image, h, w, sigma);
  std::vector<double> gx, gy;
  sobel(sm, h, w, gx, gy);
  std::vector<double> mag(image.size());
  for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(gx[i], gy[i]);
  return mag;
}

EdgeMap canny_edges(const std::vector<double>& image, int h, int w, double low, double high,
                    double sigma) {
  if (h < 1 || w < 1) throw ValidationError("canny_edges: empty image");
  if (image.size() != static_cast<size_t>(h) * w)
    throw ValidationError("canny_edges: pixel count mismatch");
  for (double v : image)
    if (!std::isfinite(v)) throw ValidationError("canny_edges: image must be finite");
  if (low < 0.0) throw ValidationError("canny_edges: low threshold must be >= 0");
  if (low > high) throw ValidationError(cat("canny_edges: low ", low, " > high ", high));

  std::vector<double> sm = gaussian_smooth(image, h, w, sigma);
  std::vector<double> gx, gy;
  sobel(sm, h, w, gx, gy);
  std::vector<double> mag(image.size());
  for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(gx[i], gy[i]);

  // Non-maximum suppression along the quantized gradient direction. The
  // asymmetric (>, >=) pair thins two-pixel plateaus to a single line.
  std::vector<uint8_t> keep(mag.size(), 0);
  auto m = [&](int y, int x) {
    return mag[static_cast<size_t>(clampi(y, 0, h - 1)) * w + clampi(x, 0, w - 1)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t idx = static_cast<size_t>(y) * w + x;
      double g = mag[idx];
      if (g <= low) continue;
      double ang = std::atan2(gy[idx], gx[idx]);
      if (ang < 0) ang += 3.14159265358979323846;
      int dy1, dx1;
      if (ang < 3.14159265358979323846 / 8 || ang >= 7 * 3.14159265358979323846 / 8) {
        dy1 = 0;
        dx1 = 1;  // horizontal gradient, vertical edge
      } else if (ang < 3 * 3.14159265358979323846 / 8) {
        dy1 = 1;
        dx1 = 1;
      } else if (ang < 5 * 3.14159265358979323846 / 8) {
        dy1 = 1;
        dx1 = 0;
      } else {
        dy1 = 1;
        dx1 = -1;
      }
      if (g > m(y - dy1, x - dx1) && g >= m(y + dy1, x + dx1)) keep[idx] = 1;
    }

  // Hysteresis: flood from strong candidates through weak ones, 8-connected.
  EdgeMap out;
  out.h = h;
  out.w = w;
  out.kind = EdgeMap::Kind::canny_input;
  out.values.assign(mag.size(), 0.0);
  std::vector<size_t> stack;
  for (size_t i = 0; i < mag.size(); ++i)
    if (keep[i] && mag[i] > high) {
      out.values[i] = 1.0;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    size_t i = stack.back();
    stack.pop_back();
    int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        size_t ni = static_cast<size_t>(ny) * w + nx;
        if (keep[ni] && out.values[ni] == 0.0) {
          out.values[ni] = 1.0;
          stack.push_back(ni);
        }
      }
  }
  return out;
}

EdgeMap canny_edges_default(const std::vector<double>& image, int h, int w) {
  std::vector<double> mag = gradient_magnitude(image, h, w);
  double gmax = 0.0;
  for (double v : mag) gmax = std::max(gmax, v);
  return canny_edges(image, h, w, 0.1 * gmax, 0.2 * gmax);
}

}  // namespace fusionseg
