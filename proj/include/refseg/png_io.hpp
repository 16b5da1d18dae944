#pragma once

#include "refseg/image.hpp"

#include <string>

namespace refseg {

// Decodes any PNG to float RGB (ch=3) or grayscale (ch=1), values in [0,1].
ImageF read_png(const std::string& path, int want_channels);

// 8-bit PNG writers. Gray masks are written as 0/255.
void write_png_rgb(const std::string& path, const ImageF& img);
void write_png_mask(const std::string& path, const MaskU8& mask);
void write_png_gray(const std::string& path, const ImageF& gray);  // ch must be 1

}  // namespace refseg
