#pragma once

#include <string>

#include "hex4d/tensor.h"

namespace hex4d {

// Images are Tensor<float> with shape {H, W, C}, values in [0, 1] for 8/16-bit
// content. C is 1 (gray), 3 (RGB) or 4 (RGBA).

// Decodes an 8- or 16-bit PNG. Values are scaled to [0, 1].
Tensorf read_png(const std::string& path);

// Writes an 8-bit PNG, rounding each value from [0, 1]. Round-trips exactly for
// values on the k/255 lattice.
void write_png8(const std::string& path, const Tensorf& img);

// Writes a 16-bit PNG (C must be 1 or 3). Used for depth maps and the
// subprocess wire format, where 8 bits would quantize too coarsely.
void write_png16(const std::string& path, const Tensorf& img);

// In-memory variants used by the subprocess protocols.
std::string encode_png16(const Tensorf& img);
Tensorf decode_png(const std::string& bytes);

inline int image_height(const Tensorf& img) { return img.dim(0); }
inline int image_width(const Tensorf& img) { return img.dim(1); }
inline int image_channels(const Tensorf& img) { return img.ndim() == 3 ? img.dim(2) : 1; }

}  // namespace hex4d
