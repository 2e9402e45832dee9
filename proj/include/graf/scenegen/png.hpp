#pragma once

// 8-bit RGB PNG encoding and decoding through libpng.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/core/image.hpp"

namespace graf::scene {

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct PngIo {
  const std::uint8_t* data = nullptr;
  std::size_t size = 0;
  std::size_t pos = 0;
  std::vector<std::uint8_t>* out = nullptr;
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  char message[256] = {0};
};

inline void png_on_error(png_structp png, png_const_charp msg) {
  auto* io = static_cast<PngIo*>(png_get_error_ptr(png));
  std::snprintf(io->message, sizeof(io->message), "%s", msg);
  png_longjmp(png, 1);
}

inline void png_on_warning(png_structp, png_const_charp) {}

inline void png_read_bytes(png_structp png, png_bytep dst, png_size_t n) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  if (io->size - io->pos < n) png_error(png, "unexpected end of stream");
  std::memcpy(dst, io->data + io->pos, n);
  io->pos += n;
}

inline void png_write_bytes(png_structp png, png_bytep src, png_size_t n) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  io->out->insert(io->out->end(), src, src + n);
}

inline void png_flush_noop(png_structp) {}

inline std::uint8_t quantize(double v) {
  const double c = std::isnan(v) ? 0.0 : std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace detail

// Channels are clamped to [0, 1] and rounded to the nearest of 256 levels.
inline std::vector<std::uint8_t> png_encode(const Image& img) {
  if (img.width < 1 || img.height < 1) throw PngError("png_encode: image must be at least 1x1");
  if (img.data.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3) {
    throw PngError("png_encode: pixel buffer does not match dimensions");
  }
  std::vector<std::uint8_t> pixels(img.data.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = detail::quantize(img.data[i]);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * img.width * 3;

  std::vector<std::uint8_t> out;
  detail::PngIo io;
  io.out = &out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &io, detail::png_on_error, detail::png_on_warning);
  if (!png) throw PngError("png_encode: libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw PngError(std::string("png_encode: ") + io.message);
  }
  png_set_write_fn(png, &io, detail::png_write_bytes, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// Accepts only 8-bit RGB without alpha. Errors report the byte offset reached.
inline Image png_decode(const std::vector<std::uint8_t>& bytes, std::optional<std::pair<int, int>> expect_size = std::nullopt) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw PngError("png_decode: bad signature at byte 0");
  detail::PngIo io;
  io.data = bytes.data();
  io.size = bytes.size();
  auto& pixels = io.pixels;
  auto& rows = io.rows;
  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0, interlace = 0;
  volatile bool wrong_format = false;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &io, detail::png_on_error, detail::png_on_warning);
  if (!png) throw PngError("png_decode: libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw PngError("png_decode: " + std::string(io.message) + " at byte " + std::to_string(io.pos));
  }
  png_set_read_fn(png, &io, detail::png_read_bytes);
  png_read_info(png, info);
  png_get_IHDR(png, info, &w, &h, &depth, &color, &interlace, nullptr, nullptr);
  if (depth != 8 || color != PNG_COLOR_TYPE_RGB || interlace != PNG_INTERLACE_NONE) {
    wrong_format = true;
  } else {
    pixels.resize(static_cast<std::size_t>(w) * h * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  const std::size_t header_end = io.pos;
  png_destroy_read_struct(&png, &info, nullptr);

  if (wrong_format) {
    throw PngError("png_decode: expected 8-bit non-interlaced RGB, got bit depth " + std::to_string(depth) + " color type " +
                   std::to_string(color) + " (header ends at byte " + std::to_string(header_end) + ")");
  }
  if (expect_size && (static_cast<int>(w) != expect_size->first || static_cast<int>(h) != expect_size->second)) {
    throw PngError("png_decode: image is " + std::to_string(w) + "x" + std::to_string(h) + ", expected " +
                   std::to_string(expect_size->first) + "x" + std::to_string(expect_size->second));
  }
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, png_encode(img)); }

inline Image read_png(const std::filesystem::path& path, std::optional<std::pair<int, int>> expect_size = std::nullopt) {
  try {
    return png_decode(read_file_bytes(path), expect_size);
  } catch (const PngError& e) {
    throw PngError(path.string() + ": " + e.what());
  }
}

}  // namespace graf::scene
