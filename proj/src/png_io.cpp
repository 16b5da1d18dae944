#include "refseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace refseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("png: " + what + ": " + path);
}

}  // namespace

ImageF read_png(const std::string& path, int want_channels) {
  if (want_channels != 1 && want_channels != 3)
    throw std::invalid_argument("read_png: want_channels must be 1 or 3");
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(path, "cannot open");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "decode error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (want_channels == 3) {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
  } else {
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  const size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<png_byte> raw(row_bytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const int ch = static_cast<int>(row_bytes / w);
  if (ch != want_channels) fail(path, "unexpected channel count after decode");

  ImageF img = make_image(static_cast<int>(h), static_cast<int>(w), want_channels);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

namespace {

void write_png_8bit(const std::string& path, int h, int w, int ch,
                    const std::vector<png_byte>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(path, "cannot open for write");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "encode error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  const size_t row_bytes = static_cast<size_t>(w) * ch;
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(bytes.data() + y * row_bytes);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

png_byte to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<png_byte>(c * 255.0f + 0.5f);
}

}  // namespace

void write_png_rgb(const std::string& path, const ImageF& img) {
  if (img.ch != 3) throw std::invalid_argument("write_png_rgb: need 3 channels");
  std::vector<png_byte> bytes(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) bytes[i] = to_byte(img.data[i]);
  write_png_8bit(path, img.h, img.w, 3, bytes);
}

void write_png_mask(const std::string& path, const MaskU8& mask) {
  std::vector<png_byte> bytes(mask.data.size());
  for (size_t i = 0; i < mask.data.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
  write_png_8bit(path, mask.h, mask.w, 1, bytes);
}

void write_png_gray(const std::string& path, const ImageF& gray) {
  if (gray.ch != 1) throw std::invalid_argument("write_png_gray: need 1 channel");
  std::vector<png_byte> bytes(gray.data.size());
  for (size_t i = 0; i < gray.data.size(); ++i) bytes[i] = to_byte(gray.data[i]);
  write_png_8bit(path, gray.h, gray.w, 1, bytes);
}

ImageF resize_bilinear(const ImageF& src, int oh, int ow) {
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
  ImageF out = make_image(oh, ow, src.ch);
  const double sy = static_cast<double>(src.h) / oh;
  const double sx = static_cast<double>(src.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double py = (y + 0.5) * sy - 0.5;
    py = std::min(std::max(py, 0.0), static_cast<double>(src.h - 1));
    const int y0 = static_cast<int>(py);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const float fy = static_cast<float>(py - y0);
    for (int x = 0; x < ow; ++x) {
      double px = (x + 0.5) * sx - 0.5;
      px = std::min(std::max(px, 0.0), static_cast<double>(src.w - 1));
      const int x0 = static_cast<int>(px);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const float fx = static_cast<float>(px - x0);
      for (int c = 0; c < src.ch; ++c) {
        const float top = src.at(y0, x0, c) * (1.0f - fx) + src.at(y0, x1, c) * fx;
        const float bot = src.at(y1, x0, c) * (1.0f - fx) + src.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace refseg
