#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pram/image_io.hpp"
#include "pram/optim.hpp"

// Checkpoint layout (all integers little-endian):
//   "PRAMCK01"
//   u64 text length, UTF-8 text block (config snapshot and state.* lines)
//   u32 parameter count, then per parameter:
//     u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//     u32 rank, rank x u64 dims, raw little-endian values

namespace pram {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'A', 'M', 'C', 'K', '0', '1'};

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;  // widened for storage-independent access
};

struct CheckpointData {
  std::string text;
  std::vector<TensorRecord> tensors;
};

namespace detail {
template <typename U>
void put_le(std::ostream& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::istream& in) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == EOF) throw IoError("truncated checkpoint");
    v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
}  // namespace detail

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const std::string& text, const ParameterStore<T>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.all().size()));
  for (const auto& p : store.all()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    out.put(static_cast<char>(std::is_same_v<T, double> ? DType::F64 : DType::F32));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->tensor.rank()));
    for (auto d : p->tensor.shape()) detail::put_le<std::uint64_t>(out, d);
    for (T v : p->tensor.values()) {
      if constexpr (std::is_same_v<T, double>)
        detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      else
        detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError(path.string() + " is not a PRAMCK01 checkpoint");
  CheckpointData data;
  const auto text_len = detail::get_le<std::uint64_t>(in);
  data.text.resize(text_len);
  if (!in.read(data.text.data(), static_cast<std::streamsize>(text_len))) throw IoError("truncated checkpoint");
  const auto count = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name.resize(detail::get_le<std::uint32_t>(in));
    if (!in.read(rec.name.data(), static_cast<std::streamsize>(rec.name.size()))) throw IoError("truncated checkpoint");
    const int tag = in.get();
    if (tag != 0 && tag != 1) throw IoError("checkpoint: unknown dtype tag for " + rec.name);
    rec.dtype = static_cast<DType>(tag);
    const auto rank = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < rank; ++r) rec.shape.push_back(detail::get_le<std::uint64_t>(in));
    rec.values.resize(numel(rec.shape));
    for (auto& v : rec.values) {
      if (rec.dtype == DType::F64)
        v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
      else
        v = std::bit_cast<float>(detail::get_le<std::uint32_t>(in));
    }
    data.tensors.push_back(std::move(rec));
  }
  return data;
}

/// Copies stored tensors into an existing store, matching by name and shape.
/// Every store parameter must be present.
template <typename T>
void load_parameters(const CheckpointData& data, ParameterStore<T>& store) {
  for (auto& p : store.all()) {
    const TensorRecord* rec = nullptr;
    for (const auto& r : data.tensors)
      if (r.name == p->name) rec = &r;
    if (!rec) throw IoError("checkpoint is missing parameter " + p->name);
    if (rec->shape != p->tensor.shape())
      throw IoError("checkpoint parameter " + p->name + " has shape " + shape_str(rec->shape) + ", model expects " +
                    shape_str(p->tensor.shape()));
    auto& dst = p->tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec->values[i]);
  }
}

}  // namespace pram
