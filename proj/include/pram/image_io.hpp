#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/mask_geometry.hpp"

namespace pram {

struct Gray8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_pgm(const std::filesystem::path& path, const Gray8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

/// Reads binary (P5) 8-bit PGM files; '#' comments in the header are skipped.
inline Gray8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&in, &path]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) return t;
      } else {
        t.push_back(c);
      }
    }
    if (t.empty()) throw IoError("truncated PGM header in " + path.string());
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + " is not a binary PGM (P5)");
  Gray8 img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw IoError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw IoError("malformed PGM header in " + path.string());
  }
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw IoError("truncated PGM data in " + path.string());
  return img;
}

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Gray8 to_gray8(const Image& img) {
  if (img.channels != 1) throw DimensionError("to_gray8: single-channel images only");
  Gray8 g{img.height, img.width, std::vector<std::uint8_t>(img.pixels.size())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) g.pixels[i] = quantize(img.pixels[i]);
  return g;
}

inline Image from_gray8(const Gray8& g) {
  Image img(1, g.height, g.width);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) img.pixels[i] = static_cast<float>(g.pixels[i]) / 255.0f;
  return img;
}

inline Gray8 mask_to_gray8(const BinaryMask& m) {
  Gray8 g{m.height, m.width, std::vector<std::uint8_t>(m.bits.size())};
  for (std::size_t i = 0; i < m.bits.size(); ++i) g.pixels[i] = m.bits[i] ? 255 : 0;
  return g;
}

/// Pixel >= 128 is object.
inline BinaryMask mask_from_gray8(const Gray8& g) {
  BinaryMask m(g.height, g.width);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) m.bits[i] = g.pixels[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace pram
