#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fusionseg {

// Grayscale PNG helpers on top of libpng. write_png_gray16 quantizes [0,1]
// intensities to 16-bit; write_png_gray8 stores raw bytes (labels, edge dumps).
void write_png_gray16(const std::string& path, int h, int w, const std::vector<double>& values);
void write_png_gray8(const std::string& path, int h, int w, const std::vector<uint8_t>& values);
std::vector<double> read_png_gray16(const std::string& path, int& h, int& w);
std::vector<uint8_t> read_png_gray8(const std::string& path, int& h, int& w);

}  // namespace fusionseg
