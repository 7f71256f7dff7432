#ifndef FETALSEG_PNG_IO_HPP
#define FETALSEG_PNG_IO_HPP

#include <string>

#include "fetalseg/image.hpp"

namespace fetalseg {

// Decodes any 8/16-bit gray, palette or RGB PNG to grayscale in [0,1].
ImageF read_png_gray(const std::string& path);

// Decodes a class-index mask: palette PNGs yield raw palette indices,
// grayscale PNGs yield raw sample values. RGB masks are rejected.
MaskU8 read_png_mask(const std::string& path);

// 8-bit grayscale output, values quantized from [0,1].
void write_png_gray(const ImageF& image, const std::string& path);

// 8-bit indexed output with a fixed per-class palette; lossless for indices.
void write_png_mask(const MaskU8& mask, const std::string& path);

}  // namespace fetalseg

#endif
