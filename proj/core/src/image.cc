#include "hex4d/image.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "hex4d/common.h"

namespace hex4d {

namespace {

struct PngReadCtx {
  const unsigned char* p;
  size_t left;
};

void mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
  if (n > ctx->left) png_error(png, "truncated PNG stream");
  std::memcpy(out, ctx->p, n);
  ctx->p += n;
  ctx->left -= n;
}

void mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void mem_flush(png_structp) {}

// Keep libpng quiet: record the message for the exception instead of letting
// the default handler print to stderr before the longjmp.
void silent_error(png_structp png, png_const_charp msg) {
  auto* s = static_cast<std::string*>(png_get_error_ptr(png));
  if (s) *s = msg;
  png_longjmp(png, 1);
}

void silent_warning(png_structp, png_const_charp) {}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGBA;
    default: throw ContractError("unsupported channel count for PNG");
  }
}

Tensorf decode_common(png_structp png, png_infop info) {
  png_read_info(png, info);
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color = 0;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color, nullptr, nullptr, nullptr);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // libpng is big-endian on the wire
  png_read_update_info(png, info);

  png_get_IHDR(png, info, &w, &h, &bit_depth, &color, nullptr, nullptr, nullptr);
  int channels = png_get_channels(png, info);

  Tensorf img({static_cast<int>(h), static_cast<int>(w), channels});
  size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> row(rowbytes);
  // Divide rather than multiply by a reciprocal so k/255.0f round-trips to the
  // exact float that callers compute themselves.
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    float* dst = img.data() + static_cast<int64_t>(y) * w * channels;
    if (bit_depth == 16) {
      const uint16_t* src = reinterpret_cast<const uint16_t*>(row.data());
      for (size_t i = 0; i < w * static_cast<size_t>(channels); ++i)
        dst[i] = static_cast<float>(src[i]) / 65535.0f;
    } else {
      for (size_t i = 0; i < w * static_cast<size_t>(channels); ++i)
        dst[i] = static_cast<float>(row[i]) / 255.0f;
    }
  }
  png_read_end(png, nullptr);
  return img;
}

}  // namespace

Tensorf decode_png(const std::string& bytes) {
  std::string errmsg;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &errmsg, silent_error, silent_warning);
  H4D_CHECK(png != nullptr);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  PngReadCtx ctx{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};
  Tensorf result;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decode failed: " + errmsg);
  }
  png_set_read_fn(png, &ctx, mem_read);
  result = decode_common(png, info);
  png_destroy_read_struct(&png, &info, nullptr);
  return result;
}

Tensorf read_png(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open PNG for reading: " + path);
  std::string bytes;
  char buf[1 << 16];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, n);
  std::fclose(f);
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + ": " + path);
  }
}

namespace {

std::string encode_png(const Tensorf& img, int bit_depth) {
  H4D_CHECK(img.ndim() == 3, "image must be {H, W, C}");
  const int h = image_height(img), w = image_width(img), c = image_channels(img);
  H4D_CHECK(h > 0 && w > 0);
  if (bit_depth == 16) H4D_CHECK(c == 1 || c == 3, "16-bit PNG supports gray or RGB");

  std::string errmsg;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &errmsg, silent_error, silent_warning);
  H4D_CHECK(png != nullptr);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + errmsg);
  }
  png_set_write_fn(png, &out, mem_write, mem_flush);
  png_set_IHDR(png, info, w, h, bit_depth, color_type_for(c), PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  if (bit_depth == 8) {
    std::vector<unsigned char> row(static_cast<size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
      const float* src = img.data() + static_cast<int64_t>(y) * w * c;
      for (size_t i = 0; i < row.size(); ++i) {
        float v = std::clamp(src[i], 0.0f, 1.0f);
        row[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
      png_write_row(png, row.data());
    }
  } else {
    std::vector<uint16_t> row(static_cast<size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
      const float* src = img.data() + static_cast<int64_t>(y) * w * c;
      for (size_t i = 0; i < row.size(); ++i) {
        float v = std::clamp(src[i], 0.0f, 1.0f);
        row[i] = static_cast<uint16_t>(std::lround(v * 65535.0f));
      }
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_file(const std::string& path, const std::string& bytes) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open PNG for writing: " + path);
  size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw IoError("short write: " + path);
}

}  // namespace

std::string encode_png16(const Tensorf& img) { return encode_png(img, 16); }

void write_png8(const std::string& path, const Tensorf& img) {
  write_file(path, encode_png(img, 8));
}

void write_png16(const std::string& path, const Tensorf& img) {
  write_file(path, encode_png(img, 16));
}

}  // namespace hex4d
