#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/tensor.hpp"

namespace pram {

/// Channel-major float image, values nominally in [0,1].
struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t r, std::size_t col) { return pixels[(c * height + r) * width + col]; }
  float at(std::size_t c, std::size_t r, std::size_t col) const { return pixels[(c * height + r) * width + col]; }
  bool operator==(const Image&) const = default;
};

/// H x W grid of object (true) / background (false) pixels.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits[r * width + c] = v ? 1 : 0; }
  std::size_t area() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  bool empty() const { return area() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

struct Box {
  std::size_t row_min, col_min, row_max, col_max;
  bool operator==(const Box&) const = default;
};

/// Window of a fixed size anchored on a centre point.
struct CropSpec {
  std::ptrdiff_t center_row = 0;
  std::ptrdiff_t center_col = 0;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
};

/// Intersection over union. Two empty masks give 0.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError("iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::optional<Box> bounding_box(const BinaryMask& m) {
  std::optional<Box> box;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) {
      if (!m.at(r, c)) continue;
      if (!box) {
        box = Box{r, c, r, c};
      } else {
        box->row_min = std::min(box->row_min, r);
        box->col_min = std::min(box->col_min, c);
        box->row_max = std::max(box->row_max, r);
        box->col_max = std::max(box->col_max, c);
      }
    }
  return box;
}

inline BinaryMask mask_union(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw std::invalid_argument("mask_union: no masks");
  BinaryMask out(masks[0].height, masks[0].width);
  for (const auto& m : masks) {
    if (m.height != out.height || m.width != out.width) throw DimensionError("mask_union: mask sizes differ");
    for (std::size_t i = 0; i < m.bits.size(); ++i) out.bits[i] |= m.bits[i];
  }
  return out;
}

/// Copies an (out_h x out_w) window whose top-left corner is (top, left).
/// The window must lie inside the image.
inline Image crop_window(const Image& image, std::size_t top, std::size_t left, std::size_t out_h,
                         std::size_t out_w) {
  if (top + out_h > image.height || left + out_w > image.width)
    throw DimensionError("crop_window: window exceeds image");
  Image out(image.channels, out_h, out_w);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t r = 0; r < out_h; ++r)
      std::copy_n(&image.pixels[(c * image.height + top + r) * image.width + left], out_w, &out.at(c, r, 0));
  return out;
}

inline BinaryMask crop_window(const BinaryMask& mask, std::size_t top, std::size_t left, std::size_t out_h,
                              std::size_t out_w) {
  if (top + out_h > mask.height || left + out_w > mask.width)
    throw DimensionError("crop_window: window exceeds mask");
  BinaryMask out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r)
    std::copy_n(&mask.bits[(top + r) * mask.width + left], out_w, &out.bits[r * out_w]);
  return out;
}

/// Crop centred on the mask's bounding box (floor of the box midpoint).
inline std::optional<CropSpec> part_crop_spec(const BinaryMask& m, std::size_t out_h, std::size_t out_w) {
  auto box = bounding_box(m);
  if (!box) return std::nullopt;
  return CropSpec{static_cast<std::ptrdiff_t>((box->row_min + box->row_max) / 2),
                  static_cast<std::ptrdiff_t>((box->col_min + box->col_max) / 2), out_h, out_w};
}

/// Top-left corner of a CropSpec window, shifted to stay inside an H x W
/// frame rather than padded.
inline std::pair<std::size_t, std::size_t> clamped_origin(const CropSpec& spec, std::size_t height,
                                                          std::size_t width) {
  auto clamp_axis = [](std::ptrdiff_t center, std::size_t out, std::size_t extent) {
    std::ptrdiff_t start = center - static_cast<std::ptrdiff_t>(out / 2);
    start = std::clamp<std::ptrdiff_t>(start, 0, static_cast<std::ptrdiff_t>(extent - out));
    return static_cast<std::size_t>(start);
  };
  return {clamp_axis(spec.center_row, spec.out_height, height), clamp_axis(spec.center_col, spec.out_width, width)};
}

/// Part crop of size out_h x out_w around the mask's bounding-box centre.
/// An empty mask yields an all-zero image of the requested size.
inline Image crop_part(const Image& image, const BinaryMask& m, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw DimensionError("crop_part: output size must be positive");
  if (out_h > image.height || out_w > image.width)
    throw DimensionError("crop_part: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " exceeds image " + std::to_string(image.height) + "x" + std::to_string(image.width));
  if (m.height != image.height || m.width != image.width) throw DimensionError("crop_part: mask/image size differ");
  auto spec = part_crop_spec(m, out_h, out_w);
  if (!spec) return Image(image.channels, out_h, out_w);
  auto [top, left] = clamped_origin(*spec, image.height, image.width);
  return crop_window(image, top, left, out_h, out_w);
}

struct CropOffset {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const CropOffset&) const = default;
};

/// Uniform top-left offset in [0, in-out] on both axes.
inline CropOffset random_crop_offset(std::size_t in_size, std::size_t out_size, std::mt19937_64& rng) {
  if (out_size > in_size) throw DimensionError("random crop larger than input");
  std::uniform_int_distribution<std::size_t> dist(0, in_size - out_size);
  const std::size_t r = dist(rng);
  const std::size_t c = dist(rng);
  return {r, c};
}

inline CropOffset center_crop_offset(std::size_t in_size, std::size_t out_size) {
  if (out_size > in_size) throw DimensionError("center crop larger than input");
  return {(in_size - out_size) / 2, (in_size - out_size) / 2};
}

struct CroppedSample {
  Image image;
  std::vector<BinaryMask> masks;
  CropOffset offset;
};

/// Applies one offset to an image and all its masks.
inline CroppedSample apply_crop(const Image& image, std::span<const BinaryMask> masks, CropOffset offset,
                                std::size_t out_size) {
  CroppedSample out;
  out.offset = offset;
  out.image = crop_window(image, offset.row, offset.col, out_size, out_size);
  for (const auto& m : masks) {
    if (m.height != image.height || m.width != image.width) throw DimensionError("apply_crop: mask/image size differ");
    out.masks.push_back(crop_window(m, offset.row, offset.col, out_size, out_size));
  }
  return out;
}

/// Training-time crop: requires exactly in_size x in_size input; with an rng
/// the offset is uniform in [0, in-out]^2, without one it is the centre.
inline CroppedSample random_crop(const Image& image, std::span<const BinaryMask> masks, std::mt19937_64* rng,
                                 std::size_t in_size = 144, std::size_t out_size = 128) {
  if (image.height != in_size || image.width != in_size)
    throw DimensionError("random_crop: expected " + std::to_string(in_size) + "x" + std::to_string(in_size) +
                         " input, got " + std::to_string(image.height) + "x" + std::to_string(image.width));
  const CropOffset offset = rng ? random_crop_offset(in_size, out_size, *rng) : center_crop_offset(in_size, out_size);
  return apply_crop(image, masks, offset, out_size);
}

}  // namespace pram
