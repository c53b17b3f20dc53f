#include "fusionseg/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "fusionseg/common.hpp"

namespace fusionseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

void write_gray(const std::string& path, int h, int w, int bit_depth,
                const std::vector<png_bytep>& rows) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("cannot open PNG for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("libpng error while writing", path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows are little-endian in memory
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void read_gray(const std::string& path, int expect_depth, int& h, int& w,
               std::vector<uint8_t>& bytes) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail("cannot open PNG for reading", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_read_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("libpng error while reading", path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  int depth = png_get_bit_depth(png, info);
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (expect_depth == 16 && depth != 16)
    fail("expected 16-bit grayscale PNG", path);
  if (expect_depth == 8 && depth == 16) png_set_strip_16(png);
  if (expect_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  h = static_cast<int>(png_get_image_height(png, info));
  w = static_cast<int>(png_get_image_width(png, info));
  size_t rowbytes = png_get_rowbytes(png, info);
  bytes.assign(rowbytes * static_cast<size_t>(h), 0);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = bytes.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_gray16(const std::string& path, int h, int w, const std::vector<double>& values) {
  if (values.size() != static_cast<size_t>(h) * w)
    throw ValidationError("write_png_gray16: value count mismatch");
  std::vector<uint16_t> pix(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, values[i]));
    pix[i] = static_cast<uint16_t>(std::lround(v * 65535.0));
  }
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = reinterpret_cast<png_bytep>(pix.data() + static_cast<size_t>(y) * w);
  write_gray(path, h, w, 16, rows);
}

void write_png_gray8(const std::string& path, int h, int w, const std::vector<uint8_t>& values) {
  if (values.size() != static_cast<size_t>(h) * w)
    throw ValidationError("write_png_gray8: value count mismatch");
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(values.data() + static_cast<size_t>(y) * w);
  write_gray(path, h, w, 8, rows);
}

std::vector<double> read_png_gray16(const std::string& path, int& h, int& w) {
  std::vector<uint8_t> bytes;
  read_gray(path, 16, h, w, bytes);
  const uint16_t* pix = reinterpret_cast<const uint16_t*>(bytes.data());
  std::vector<double> out(static_cast<size_t>(h) * w);
  for (size_t i = 0; i < out.size(); ++i) out[i] = pix[i] / 65535.0;
  return out;
}

std::vector<uint8_t> read_png_gray8(const std::string& path, int& h, int& w) {
  std::vector<uint8_t> bytes;
  read_gray(path, 8, h, w, bytes);
  bytes.resize(static_cast<size_t>(h) * w);
  return bytes;
}

}  // namespace fusionseg
