#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "lohg/error.hpp"

namespace lohg {

/// Grayscale image decoded from a binary (P5) PGM. Values are scaled to [0, 1]
/// by the declared maxval, so the raw sample k reads back as k/maxval.
struct PgmImage {
  int64_t height = 0;
  int64_t width = 0;
  int64_t maxval = 255;
  std::vector<double> values;  // row-major, size height*width
};

namespace detail {

/// Cursor over the raw file bytes; every failure reports the byte offset.
struct PgmCursor {
  const std::vector<unsigned char>& bytes;
  size_t pos = 0;
  const std::string& path;

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path + ": " + what + " at byte " + std::to_string(pos));
  }
  bool eof() const { return pos >= bytes.size(); }
  unsigned char peek() const { return bytes[pos]; }

  static bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
  }

  /// Skips whitespace and '#' comments (which run to end of line).
  void skip_separators() {
    while (!eof()) {
      if (is_space(peek())) {
        ++pos;
      } else if (peek() == '#') {
        while (!eof() && peek() != '\n') ++pos;
      } else {
        return;
      }
    }
  }

  int64_t read_int(const char* name) {
    skip_separators();
    if (eof() || peek() < '0' || peek() > '9') fail(std::string("expected ") + name);
    int64_t v = 0;
    while (!eof() && peek() >= '0' && peek() <= '9') {
      v = v * 10 + (peek() - '0');
      if (v > int64_t{1} << 40) fail(std::string(name) + " out of range");
      ++pos;
    }
    return v;
  }
};

}  // namespace detail

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  detail::PgmCursor c{bytes, 0, path};

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    c.fail("expected binary PGM magic \"P5\"");
  c.pos = 2;
  if (!c.eof() && !detail::PgmCursor::is_space(c.peek()) && c.peek() != '#')
    c.fail("expected separator after magic");

  PgmImage img;
  img.width = c.read_int("width");
  img.height = c.read_int("height");
  img.maxval = c.read_int("maxval");
  if (img.width < 1 || img.height < 1) c.fail("extents must be positive");
  if (img.maxval < 1 || img.maxval > 65535) c.fail("maxval must lie in [1, 65535]");

  // Exactly one separator byte sits between maxval and the raster.
  if (c.eof() || !detail::PgmCursor::is_space(c.peek())) c.fail("expected single separator before raster");
  ++c.pos;

  int64_t bytes_per = img.maxval > 255 ? 2 : 1;
  int64_t need = img.width * img.height * bytes_per;
  if (static_cast<int64_t>(bytes.size() - c.pos) < need)
    c.fail("truncated raster, need " + std::to_string(need) + " bytes");

  img.values.resize(static_cast<size_t>(img.width * img.height));
  const unsigned char* p = bytes.data() + c.pos;
  for (size_t i = 0; i < img.values.size(); ++i) {
    int64_t raw;
    if (bytes_per == 2) {
      raw = (static_cast<int64_t>(p[2 * i]) << 8) | p[2 * i + 1];  // most significant byte first
    } else {
      raw = p[i];
    }
    img.values[i] = static_cast<double>(raw) / static_cast<double>(img.maxval);
  }
  return img;
}

/// Writes a binary (P5) PGM. Values are clamped to [0, 1] and quantized to
/// round(v*maxval); maxval above 255 selects the two-byte big-endian raster.
inline void write_pgm(const std::string& path, std::span<const double> values, int64_t height,
                      int64_t width, int64_t maxval = 255) {
  if (height < 1 || width < 1) throw ContractError("write_pgm: extents must be positive");
  if (maxval < 1 || maxval > 65535) throw ContractError("write_pgm: maxval must lie in [1, 65535]");
  if (values.size() != static_cast<size_t>(height * width))
    throw DimensionError("write_pgm: buffer size does not match extents");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "P5\n" << width << " " << height << "\n" << maxval << "\n";
  for (double v : values) {
    double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    auto q = static_cast<int64_t>(std::llround(clamped * static_cast<double>(maxval)));
    if (maxval > 255) {
      unsigned char b[2] = {static_cast<unsigned char>(q >> 8), static_cast<unsigned char>(q & 0xff)};
      out.write(reinterpret_cast<const char*>(b), 2);
    } else {
      auto b = static_cast<unsigned char>(q);
      out.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  if (!out) throw FormatError(path + ": write failed");
}

inline void write_pgm(const std::string& path, const PgmImage& img) {
  write_pgm(path, std::span<const double>(img.values.data(), img.values.size()), img.height,
            img.width, img.maxval);
}

}  // namespace lohg
