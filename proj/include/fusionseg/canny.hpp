#pragma once

#include <vector>

#include "fusionseg/image.hpp"

namespace fusionseg {

// Gaussian smooth -> Sobel -> non-maximum suppression -> hysteresis.
// `low`/`high` are absolute thresholds on the Sobel gradient magnitude; a
// pixel is an edge candidate only when its magnitude is strictly above the
// threshold, so a constant image yields an all-zero map even at low = 0.
EdgeMap canny_edges(const std::vector<double>& image, int h, int w, double low, double high,
                    double sigma = 1.0);

// Thresholds at 0.1/0.2 of the image's maximum gradient magnitude.
EdgeMap canny_edges_default(const std::vector<double>& image, int h, int w);

// Sobel gradient magnitude of the Gaussian-smoothed image (replicated
// borders); the quantity the thresholds apply to.
std::vector<double> gradient_magnitude(const std::vector<double>& image, int h, int w,
                                       double sigma = 1.0);

}  // namespace fusionseg
