#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/image_io.hpp"
#include "pram/mask_geometry.hpp"
#include "pram/sampler.hpp"

// Procedural two-domain face generator. Faces are an ellipse with two eye
// ellipses, a tapered nose and a mouth ellipse; identity lives in the layout
// and tones of those components. The NIR domain is a fixed non-linear
// intensity remap plus a low-frequency additive pattern of the VIS render.

namespace pram::synth {

inline constexpr std::size_t kCanvas = 144;

enum class Level { None, Mild, Severe };

inline Level parse_level(const std::string& s) {
  if (s == "none") return Level::None;
  if (s == "mild") return Level::Mild;
  if (s == "severe") return Level::Severe;
  throw std::invalid_argument("unknown perturbation level '" + s + "' (none|mild|severe)");
}
inline std::string to_string(Level l) { return l == Level::None ? "none" : l == Level::Mild ? "mild" : "severe"; }

struct IdentitySpec {
  int identity = 0;
  // Geometry in pixels, relative to the face centre (v grows downwards).
  double face_rx = 48, face_ry = 58;
  double eye_dx = 17, eye_y = -20, eye_rx = 7, eye_ry = 4;
  double nose_y = 2, nose_len = 18, nose_w = 10;
  double mouth_y = 28, mouth_rx = 14, mouth_ry = 4.5;
  // Base intensities (VIS).
  double skin = 0.7, eye_tone = 0.15, nose_tone = 0.85, mouth_tone = 0.3;

  std::array<double, 12> geometry() const {
    return {face_rx, face_ry, eye_dx, eye_y, eye_rx, eye_ry, nose_y, nose_len, nose_w, mouth_y, mouth_rx, mouth_ry};
  }
};

/// Pixels with nx*col + ny*row > offset are covered.
struct Occlusion {
  double nx = 0, ny = 0, offset = 0;
  bool covers(double row, double col) const { return nx * col + ny * row > offset; }
};

struct RenderSpec {
  IdentitySpec identity;
  Domain domain = Domain::VIS;
  double dx = 0, dy = 0;  // pose shift in pixels
  double shear = 0;
  double emotion = 0;  // > 0 opens the mouth and narrows the eyes
  std::optional<Occlusion> occlusion;
  double gain = 1.0;
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
};

struct Rendered {
  Image image;
  std::array<BinaryMask, kNumParts> masks;
};

inline double nir_remap(double v, std::size_t row, std::size_t col) {
  const double r = static_cast<double>(row) / (kCanvas - 1), c = static_cast<double>(col) / (kCanvas - 1);
  return 0.92 - 0.75 * std::pow(std::max(v, 0.0), 0.85) + 0.10 * r + 0.06 * std::cos(M_PI * c);
}

inline constexpr double kOccluderTone = 0.35;

/// Renders a 144x144 face; masks[1..4] are the exact supports of the drawn
/// components and masks[0] is the visible face ellipse.
inline Rendered render(const RenderSpec& spec) {
  const auto& id = spec.identity;
  const double cx = (kCanvas - 1) / 2.0 + spec.dx, cy = (kCanvas - 1) / 2.0 + spec.dy;
  const double e = spec.emotion;
  const double eye_ry = id.eye_ry * (1.0 - 0.35 * e);
  const double mouth_rx = id.mouth_rx * (1.0 + 0.25 * e), mouth_ry = id.mouth_ry * (1.0 + 0.6 * e);

  Rendered out;
  out.image = Image(1, kCanvas, kCanvas);
  for (auto& m : out.masks) m = BinaryMask(kCanvas, kCanvas);
  std::mt19937_64 noise_rng(spec.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto sq = [](double x) { return x * x; };
  for (std::size_t r = 0; r < kCanvas; ++r) {
    for (std::size_t c = 0; c < kCanvas; ++c) {
      const double v = static_cast<double>(r) - cy;
      const double u = static_cast<double>(c) - cx - spec.shear * v;
      const double face_rho = sq(u / id.face_rx) + sq(v / id.face_ry);
      double value = 0.08 + 0.04 * static_cast<double>(r) / (kCanvas - 1);
      std::size_t part = 0;  // 0 = none
      if (face_rho <= 1.0) {
        value = id.skin * (1.0 - 0.25 * face_rho);
        out.masks[0].set(r, c);
        const double le = sq((u + id.eye_dx) / id.eye_rx) + sq((v - id.eye_y) / eye_ry);
        const double re = sq((u - id.eye_dx) / id.eye_rx) + sq((v - id.eye_y) / eye_ry);
        const double t = (v - (id.nose_y - id.nose_len / 2)) / id.nose_len;
        const bool nose = t >= 0 && t <= 1 && std::abs(u) <= id.nose_w / 2 * (0.45 + 0.55 * t);
        const double mo = sq(u / mouth_rx) + sq((v - id.mouth_y) / mouth_ry);
        if (mo <= 1.0) {
          part = 4;
          value = id.mouth_tone * (0.8 + 0.2 * mo);
        } else if (nose) {
          part = 3;
          value = id.skin * id.nose_tone * (0.85 + 0.15 * t);
        } else if (le <= 1.0 || re <= 1.0) {
          part = le <= 1.0 ? 1 : 2;
          const double rho = std::min(le, re);
          value = rho < 0.3 ? id.eye_tone * 0.4 : id.eye_tone + 0.5 * (rho - 0.3);
        }
      }
      if (spec.occlusion && spec.occlusion->covers(static_cast<double>(r), static_cast<double>(c))) {
        value = kOccluderTone;
        out.masks[0].set(r, c, false);
        part = 0;
      }
      if (part) out.masks[part].set(r, c);
      if (spec.domain == Domain::NIR) value = nir_remap(value, r, c);
      value = value * spec.gain + spec.noise * noise(noise_rng);
      out.image.at(0, r, c) = static_cast<float>(quantize(static_cast<float>(value))) / 255.0f;
    }
  }
  return out;
}

namespace detail {
inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
inline std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (auto p : parts) h = splitmix(h ^ p);
  return h;
}
}  // namespace detail

/// Minimum Euclidean distance between the geometry vectors of two identities.
inline constexpr double kMinGeometrySeparation = 8.0;

/// Draws `count` identities (labels 0..count-1) with pairwise geometry
/// separation of at least kMinGeometrySeparation pixels.
inline std::vector<IdentitySpec> sample_identities(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(detail::mix({seed, 0x1D}));
  auto U = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::vector<IdentitySpec> ids;
  std::size_t attempts = 0;
  while (ids.size() < count) {
    if (++attempts > 100000) throw std::runtime_error("cannot place identities with the required separation");
    IdentitySpec s;
    s.identity = static_cast<int>(ids.size());
    s.face_rx = U(44, 54);
    s.face_ry = U(54, 64);
    s.eye_dx = U(13, 22);
    s.eye_y = U(-26, -14);
    s.eye_rx = U(5, 9);
    s.eye_ry = U(3, 5.5);
    s.nose_y = U(-2, 6);
    s.nose_len = U(14, 22);
    s.nose_w = U(7, 13);
    s.mouth_y = U(24, 34);
    s.mouth_rx = U(10, 19);
    s.mouth_ry = U(3, 6);
    s.skin = U(0.55, 0.8);
    s.eye_tone = U(0.05, 0.3);
    s.nose_tone = U(0.75, 0.95);
    s.mouth_tone = U(0.15, 0.45);
    bool ok = true;
    for (const auto& o : ids) {
      double d2 = 0;
      auto a = s.geometry(), b = o.geometry();
      for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
      if (std::sqrt(d2) < kMinGeometrySeparation) {
        ok = false;
        break;
      }
    }
    if (ok) ids.push_back(s);
  }
  return ids;
}

/// Random pose/emotion/occlusion for one sample at the given level. Severe
/// occlusions hide one whole component (left eye, right eye or mouth).
inline RenderSpec perturbed_spec(const IdentitySpec& id, Domain domain, Level level, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto U = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  RenderSpec spec;
  spec.identity = id;
  spec.domain = domain;
  spec.noise = 0.015;
  spec.noise_seed = detail::splitmix(seed);
  spec.gain = U(0.94, 1.06);
  if (level == Level::None) return spec;
  const double pose = level == Level::Mild ? 3.0 : 8.0;
  const double shear = level == Level::Mild ? 0.06 : 0.2;
  const double emotion = level == Level::Mild ? 0.3 : 0.8;
  spec.dx = U(-pose, pose);
  spec.dy = U(-pose, pose);
  spec.shear = U(-shear, shear);
  spec.emotion = U(-emotion, emotion);
  if (level == Level::Severe && U(0, 1) < 0.35) {
    RenderSpec clean = spec;
    clean.noise = 0;
    const auto r = render(clean);
    const auto target = static_cast<int>(U(0, 3));
    const double margin = U(1, 6);
    if (target == 0) {
      if (auto box = bounding_box(r.masks[1])) spec.occlusion = Occlusion{-1, 0, -(box->col_max + margin)};
    } else if (target == 1) {
      if (auto box = bounding_box(r.masks[2])) spec.occlusion = Occlusion{1, 0, box->col_min - margin};
    } else {
      if (auto box = bounding_box(r.masks[4])) spec.occlusion = Occlusion{0, 1, box->row_min - margin};
    }
  }
  return spec;
}

struct GenerateOptions {
  std::size_t num_ids = 20;
  std::size_t test_ids = 10;
  std::size_t per_id = 4;  // per identity per domain
  std::uint64_t seed = 7;
  Level level = Level::Mild;
};

struct GeneratedData {
  Dataset train;
  Dataset test;
};

inline std::string sample_name(int identity, Domain d, std::size_t k) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << identity << '/' << to_string(d) << '_' << k;
  return os.str();
}

/// In-memory generation. Train identities are 0..num_ids-1, test identities
/// follow them; both splits come from one separation-checked pool.
inline GeneratedData generate(const GenerateOptions& opt) {
  if (opt.num_ids < 2) throw std::invalid_argument("generate: need at least 2 identities");
  if (opt.per_id < 1) throw std::invalid_argument("generate: need at least 1 sample per identity and domain");
  const auto ids = sample_identities(opt.num_ids + opt.test_ids, opt.seed);
  GeneratedData out;
  for (const auto& id : ids) {
    const bool train = static_cast<std::size_t>(id.identity) < opt.num_ids;
    Dataset& ds = train ? out.train : out.test;
    for (Domain d : {Domain::VIS, Domain::NIR})
      for (std::size_t k = 0; k < opt.per_id; ++k) {
        const std::uint64_t s = detail::mix({opt.seed, static_cast<std::uint64_t>(id.identity),
                                             d == Domain::VIS ? 1u : 2u, k});
        auto rendered = render(perturbed_spec(id, d, opt.level, s));
        FaceSample fs;
        fs.sample_id = (train ? "train/" : "test/") + sample_name(id.identity, d, k);
        fs.identity = id.identity;
        fs.domain = d;
        fs.image = std::move(rendered.image);
        fs.masks = std::move(rendered.masks);
        ds.samples.push_back(std::move(fs));
      }
  }
  return out;
}

inline std::size_t count_empty_component_masks(const Dataset& ds) {
  std::size_t n = 0;
  for (const auto& s : ds.samples)
    for (std::size_t i = 1; i < kNumParts; ++i) n += s.masks[i].empty();
  return n;
}

struct GenerateSummary {
  std::size_t identities = 0;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::size_t empty_masks = 0;
};

/// Writes the dataset directory: <root>/<split>/<identity>/<domain>_<k>.pgm,
/// sibling <domain>_<k>.mask<i>.pgm files and <root>/manifest.tsv.
inline GenerateSummary write_dataset(const std::filesystem::path& root, const GeneratedData& data) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::ofstream manifest(root / kManifestName);
  if (!manifest) throw IoError("cannot write " + (root / kManifestName).string());
  manifest << kManifestHeader << '\n';
  GenerateSummary summary;
  for (const auto* ds : {&data.train, &data.test}) {
    for (const auto& s : ds->samples) {
      const std::filesystem::path rel = s.sample_id;
      std::filesystem::create_directories(root / rel.parent_path(), ec);
      if (ec) throw IoError("cannot create " + (root / rel.parent_path()).string() + ": " + ec.message());
      const std::string split = s.sample_id.substr(0, s.sample_id.find('/'));
      const std::string image_rel = s.sample_id + ".pgm";
      write_pgm(root / image_rel, to_gray8(s.image));
      manifest << split << '\t' << s.sample_id << '\t' << s.identity << '\t' << to_string(s.domain) << '\t'
               << image_rel;
      for (std::size_t i = 0; i < kNumParts; ++i) {
        const std::string mask_rel = s.sample_id + ".mask" + std::to_string(i) + ".pgm";
        write_pgm(root / mask_rel, mask_to_gray8(s.masks[i]));
        manifest << '\t' << mask_rel;
      }
      manifest << '\n';
    }
  }
  if (!manifest) throw IoError("write failed: " + (root / kManifestName).string());
  summary.identities = data.train.identities().size() + (data.test.samples.empty() ? 0 : data.test.identities().size());
  summary.train_samples = data.train.samples.size();
  summary.test_samples = data.test.samples.size();
  summary.empty_masks = count_empty_component_masks(data.train) + count_empty_component_masks(data.test);
  return summary;
}

inline GenerateSummary generate_dataset(const std::filesystem::path& root, const GenerateOptions& opt) {
  return write_dataset(root, generate(opt));
}

}  // namespace pram::synth
