#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace refseg {

// Float image, HWC row-major, values in [0,1].
struct ImageF {
  int h = 0, w = 0, ch = 0;
  std::vector<float> data;

  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * w + x) * ch + c];
  }
  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * w + x) * ch + c];
  }
};

// Binary mask, row-major, values strictly 0 or 1.
struct MaskU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> data;

  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
  int64_t area() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
};

inline ImageF make_image(int h, int w, int ch) {
  ImageF img;
  img.h = h;
  img.w = w;
  img.ch = ch;
  img.data.assign(static_cast<size_t>(h) * w * ch, 0.0f);
  return img;
}

inline MaskU8 make_mask(int h, int w) {
  MaskU8 m;
  m.h = h;
  m.w = w;
  m.data.assign(static_cast<size_t>(h) * w, 0);
  return m;
}

// Bilinear resample with half-pixel centers; same convention as the
// differentiable tensor op so images and feature maps agree.
ImageF resize_bilinear(const ImageF& src, int oh, int ow);

}  // namespace refseg
