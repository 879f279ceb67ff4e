#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/mask_geometry.hpp"
#include "pram/ops.hpp"
#include "pram/optim.hpp"

namespace pram {

/// Canonical part order used everywhere: index 0 is the whole face.
enum class Part : std::size_t { Full = 0, LeftEye = 1, RightEye = 2, Nose = 3, Mouth = 4 };
inline constexpr std::size_t kNumParts = 5;
inline constexpr std::array<const char*, kNumParts> kPartNames{"full", "left_eye", "right_eye", "nose", "mouth"};

/// conv(kernel, stride, padding = kernel/2) -> MFM -> optional 2x2 max pool.
struct ConvStage {
  std::size_t out_channels = 16;  // before MFM halving
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool pool = true;
};

inline std::vector<ConvStage> default_stages() {
  return {{8, 5, 2, true}, {16, 3, 1, true}, {16, 3, 1, true}, {16, 3, 1, false}};
}

/// "out:kernel:stride:pool" entries separated by commas.
inline std::vector<ConvStage> parse_stages(const std::string& text) {
  std::vector<ConvStage> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    ConvStage s;
    char c1, c2, c3;
    int pool = 0;
    std::istringstream is(item);
    if (!(is >> s.out_channels >> c1 >> s.kernel >> c2 >> s.stride >> c3 >> pool) || c1 != ':' || c2 != ':' ||
        c3 != ':')
      throw std::invalid_argument("bad trunk stage '" + item + "', expected out:kernel:stride:pool");
    s.pool = pool != 0;
    stages.push_back(s);
  }
  if (stages.empty()) throw std::invalid_argument("trunk needs at least one stage");
  return stages;
}

inline std::string format_stages(const std::vector<ConvStage>& stages) {
  std::ostringstream os;
  for (std::size_t i = 0; i < stages.size(); ++i)
    os << (i ? "," : "") << stages[i].out_channels << ':' << stages[i].kernel << ':' << stages[i].stride << ':'
       << (stages[i].pool ? 1 : 0);
  return os.str();
}

struct BackboneConfig {
  std::size_t channels = 1;
  std::size_t face_size = 128;
  std::size_t part_size = 64;
  std::vector<ConvStage> stages = default_stages();
  std::size_t head_dim = 128;
  std::size_t freeze_below = 0;

  void validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) throw std::invalid_argument("head_dim must be positive and even");
    if (freeze_below > stages.size()) throw std::invalid_argument("freeze_below exceeds the number of stages");
    for (const auto& s : stages)
      if (s.out_channels % 2 != 0) throw std::invalid_argument("stage out_channels must be even for MFM");
    if (part_size > face_size) throw std::invalid_argument("part_size exceeds face_size");
  }
};

/// Spatial side length and flattened feature length of the trunk for a
/// square input of side `size`. Throws if a stage would not fit.
inline std::size_t trunk_output_dim(const BackboneConfig& cfg, std::size_t size) {
  std::size_t side = size, channels = cfg.channels;
  for (const auto& s : cfg.stages) {
    if (s.kernel > side + 2 * (s.kernel / 2)) throw DimensionError("trunk stage kernel exceeds input");
    side = (side + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1;
    channels = s.out_channels / 2;
    if (s.pool) {
      if (side < 2) throw DimensionError("trunk input too small for pooling");
      side = (side - 2) / 2 + 1;
    }
  }
  return side * side * channels;
}

/// Five representative vectors in canonical order, each [N, head_dim].
template <typename T>
struct PartFeatureSet {
  std::array<Tensor<T>, kNumParts> features;

  Tensor<T>& operator[](std::size_t i) { return features.at(i); }
  const Tensor<T>& operator[](std::size_t i) const { return features.at(i); }
  std::size_t batch() const { return features[0].dim(0); }
};

/// Batched network inputs: whole face [N,C,S,S] plus four part crops
/// [N,C,P,P] in canonical order (left eye, right eye, nose, mouth).
template <typename T>
struct BackboneInputs {
  Tensor<T> full;
  std::array<Tensor<T>, kNumParts - 1> parts;
};

/// Shifts and scales each consecutive block of `len` values to zero mean and
/// unit variance. Constant blocks (such as the zero crops of empty masks) are
/// only centred.
template <typename T>
void standardize_planes(std::vector<T>& v, std::size_t len) {
  for (std::size_t o = 0; o + len <= v.size(); o += len) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < len; ++i) mean += v[o + i];
    mean /= static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i) var += (v[o + i] - mean) * (v[o + i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(len));
    for (std::size_t i = 0; i < len; ++i) v[o + i] = static_cast<T>(sd > 0 ? (v[o + i] - mean) / sd : v[o + i] - mean);
  }
}

/// Crops each sample's four component regions and stacks everything into
/// batch tensors. `masks` of each sample follow the canonical order. Every
/// face and part plane is standardized before it enters the trunk.
template <typename T>
BackboneInputs<T> make_inputs(std::span<const CroppedSample> samples, const BackboneConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("make_inputs: empty batch");
  const std::size_t N = samples.size(), C = cfg.channels, S = cfg.face_size, P = cfg.part_size;
  std::vector<T> full(N * C * S * S);
  std::array<std::vector<T>, kNumParts - 1> parts;
  for (auto& p : parts) p.resize(N * C * P * P);
  for (std::size_t n = 0; n < N; ++n) {
    const auto& s = samples[n];
    if (s.image.channels != C || s.image.height != S || s.image.width != S)
      throw DimensionError("make_inputs: sample image does not match the configured face size");
    if (s.masks.size() != kNumParts) throw DimensionError("make_inputs: each sample needs five masks");
    std::copy(s.image.pixels.begin(), s.image.pixels.end(), full.begin() + n * C * S * S);
    for (std::size_t k = 1; k < kNumParts; ++k) {
      Image crop = crop_part(s.image, s.masks[k], P, P);
      std::copy(crop.pixels.begin(), crop.pixels.end(), parts[k - 1].begin() + n * C * P * P);
    }
  }
  standardize_planes(full, C * S * S);
  for (auto& p : parts) standardize_planes(p, C * P * P);
  BackboneInputs<T> in;
  in.full = Tensor<T>({N, C, S, S}, std::move(full));
  for (std::size_t k = 0; k + 1 < kNumParts; ++k) in.parts[k] = Tensor<T>({N, C, P, P}, std::move(parts[k]));
  return in;
}

/// Initial part-head bias. Positive, so the features of an all-zero crop are
/// not the zero vector.
inline constexpr double kHeadBiasInit = 0.01;

/// LightCNN-style shared trunk (conv -> MFM -> pool stages) followed by five
/// independent MFM fully-connected heads, one per part.
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParameterStore<T>& store, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in_c = cfg_.channels;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      const auto& st = cfg_.stages[s];
      const std::size_t fan_in = in_c * st.kernel * st.kernel;
      const std::string prefix = "trunk." + std::to_string(s);
      stage_weights_.push_back(store.add(prefix + ".weight", {st.out_channels, in_c, st.kernel, st.kernel},
                                         he_normal<T>(st.out_channels * fan_in, fan_in, rng)));
      stage_biases_.push_back(store.add(prefix + ".bias", {st.out_channels}, std::vector<T>(st.out_channels, T{0})));
      if (s < cfg_.freeze_below) {
        store.get(prefix + ".weight").frozen = true;
        store.get(prefix + ".bias").frozen = true;
      }
      in_c = st.out_channels / 2;
    }
    for (std::size_t i = 0; i < kNumParts; ++i) {
      const std::size_t d = trunk_dim(i);
      const std::string prefix = "head." + std::to_string(i);
      head_weights_[i] =
          store.add(prefix + ".weight", {d, 2 * cfg_.head_dim}, gaussian<T>(d * 2 * cfg_.head_dim, kFeatureInitStd, rng));
      head_biases_[i] =
          store.add(prefix + ".bias", {2 * cfg_.head_dim}, std::vector<T>(2 * cfg_.head_dim, static_cast<T>(kHeadBiasInit)));
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Flattened trunk input length for head i (whole face or part crop).
  std::size_t trunk_dim(std::size_t part_index) const {
    return trunk_output_dim(cfg_, part_index == 0 ? cfg_.face_size : cfg_.part_size);
  }

  /// [N,C,h,w] -> [N, D_trunk]; the same weights serve every input.
  Tensor<T> forward_trunk(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(1) != cfg_.channels || images.dim(2) != images.dim(3) ||
        (images.dim(2) != cfg_.face_size && images.dim(2) != cfg_.part_size))
      throw DimensionError("forward_trunk: unexpected input shape " + shape_str(images.shape()));
    Tensor<T> x = images;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      const auto& st = cfg_.stages[s];
      x = mfm(conv2d(x, stage_weights_[s], stage_biases_[s], st.stride, st.kernel / 2));
      if (st.pool) x = max_pool2d(x, 2, 2);
    }
    return flatten(x);
  }

  /// Part-specific FC of width 2*head_dim followed by MFM.
  Tensor<T> part_head(const Tensor<T>& trunk_feature, std::size_t part_index) const {
    if (part_index >= kNumParts) throw std::out_of_range("part_head: index " + std::to_string(part_index));
    return mfm(fully_connected(trunk_feature, head_weights_[part_index], head_biases_[part_index]));
  }

  PartFeatureSet<T> extract_part_features(const BackboneInputs<T>& in) const {
    PartFeatureSet<T> out;
    out[0] = part_head(forward_trunk(in.full), 0);
    for (std::size_t k = 1; k < kNumParts; ++k) out[k] = part_head(forward_trunk(in.parts[k - 1]), k);
    return out;
  }

 private:
  BackboneConfig cfg_;
  std::vector<Tensor<T>> stage_weights_, stage_biases_;
  std::array<Tensor<T>, kNumParts> head_weights_, head_biases_;
};

}  // namespace pram
