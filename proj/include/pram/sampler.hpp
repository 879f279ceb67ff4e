#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/backbone.hpp"
#include "pram/image_io.hpp"
#include "pram/losses.hpp"
#include "pram/mask_geometry.hpp"

namespace pram {

enum class Domain { VIS, NIR };

inline std::string to_string(Domain d) { return d == Domain::VIS ? "VIS" : "NIR"; }
inline Domain parse_domain(const std::string& s) {
  if (s == "VIS") return Domain::VIS;
  if (s == "NIR") return Domain::NIR;
  throw std::invalid_argument("unknown domain '" + s + "' (VIS|NIR)");
}
inline Domain other(Domain d) { return d == Domain::VIS ? Domain::NIR : Domain::VIS; }

/// One face image with its five canonical-order masks.
struct FaceSample {
  std::string sample_id;
  int identity = 0;
  Domain domain = Domain::VIS;
  Image image;
  std::array<BinaryMask, kNumParts> masks;
};

struct Dataset {
  std::vector<FaceSample> samples;

  /// Sorted distinct identity labels.
  std::vector<int> identities() const {
    std::vector<int> ids;
    for (const auto& s : samples) ids.push_back(s.identity);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  /// Position of `identity` in identities(); used as the softmax class.
  std::size_t class_index(int identity) const {
    auto ids = identities();
    auto it = std::lower_bound(ids.begin(), ids.end(), identity);
    if (it == ids.end() || *it != identity) throw std::out_of_range("unknown identity " + std::to_string(identity));
    return static_cast<std::size_t>(it - ids.begin());
  }
};

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kManifestHeader =
    "split\tsample_id\tidentity\tdomain\timage\tmask0\tmask1\tmask2\tmask3\tmask4";

/// Loads every manifest row of `split`. Paths are relative to `root`. A mask0
/// entry of "-" means no whole-face mask: the union of the four component
/// masks stands in for it.
inline Dataset load_dataset(const std::filesystem::path& root, const std::string& split) {
  std::ifstream in(root / kManifestName);
  if (!in) throw IoError("cannot open " + (root / kManifestName).string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw IoError("unexpected manifest header in " + (root / kManifestName).string());
  Dataset ds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 10) throw IoError("manifest line " + std::to_string(line_no) + ": expected 10 columns");
    if (cols[0] != split) continue;
    FaceSample s;
    s.sample_id = cols[1];
    s.identity = std::stoi(cols[2]);
    if (s.identity < 0) throw IoError("manifest line " + std::to_string(line_no) + ": negative identity");
    s.domain = parse_domain(cols[3]);
    s.image = from_gray8(read_pgm(root / cols[4]));
    for (std::size_t i = 1; i < kNumParts; ++i) s.masks[i] = mask_from_gray8(read_pgm(root / cols[5 + i]));
    if (cols[5] == "-") {
      std::array<BinaryMask, 4> comps{s.masks[1], s.masks[2], s.masks[3], s.masks[4]};
      s.masks[0] = mask_union(comps);
    } else {
      s.masks[0] = mask_from_gray8(read_pgm(root / cols[5]));
    }
    for (const auto& m : s.masks)
      if (m.height != s.image.height || m.width != s.image.width)
        throw IoError("manifest line " + std::to_string(line_no) + ": mask size differs from image");
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw IoError("split '" + split + "' has no samples in " + root.string());
  return ds;
}

/// Indices into a Dataset: anchor and positive share identity but not domain;
/// the negative has another identity.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const Triplet&) const = default;
};

enum class NegativeDomain { SameAsAnchor, SameAsPositive };

inline NegativeDomain parse_negative_domain(const std::string& s) {
  if (s == "anchor") return NegativeDomain::SameAsAnchor;
  if (s == "positive") return NegativeDomain::SameAsPositive;
  throw std::invalid_argument("unknown negative domain '" + s + "' (anchor|positive)");
}
inline std::string to_string(NegativeDomain n) { return n == NegativeDomain::SameAsAnchor ? "anchor" : "positive"; }

/// Checks the identity and domain constraints of one triplet.
inline bool valid_triplet(const Dataset& ds, const Triplet& t, NegativeDomain rule = NegativeDomain::SameAsAnchor) {
  const auto &a = ds.samples.at(t.anchor), &p = ds.samples.at(t.positive), &n = ds.samples.at(t.negative);
  const Domain neg_domain = rule == NegativeDomain::SameAsAnchor ? a.domain : p.domain;
  return a.identity == p.identity && n.identity != a.identity && a.domain != p.domain && n.domain == neg_domain;
}

/// Domain-constrained triplet sampler. Anchors alternate VIS, NIR, VIS, ...;
/// identities and samples are drawn uniformly.
class TripletSampler {
 public:
  explicit TripletSampler(const Dataset& ds, NegativeDomain rule = NegativeDomain::SameAsAnchor)
      : ds_(ds), rule_(rule) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& s = ds.samples[i];
      by_id_[s.identity][s.domain == Domain::VIS ? 0 : 1].push_back(i);
    }
    for (const auto& [id, lists] : by_id_)
      if (!lists[0].empty() && !lists[1].empty()) eligible_.push_back(id);
    if (eligible_.size() < 2)
      throw std::invalid_argument("triplet sampling needs at least 2 identities with both VIS and NIR samples; found " +
                                  std::to_string(eligible_.size()) + " of " + std::to_string(by_id_.size()));
  }

  std::vector<Triplet> sample(std::size_t batch_size, std::mt19937_64& rng) const {
    std::vector<Triplet> out;
    out.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const Domain anchor_domain = b % 2 == 0 ? Domain::VIS : Domain::NIR;
      const Domain neg_domain = rule_ == NegativeDomain::SameAsAnchor ? anchor_domain : other(anchor_domain);
      const int id = pick(eligible_, rng);
      Triplet t;
      t.anchor = pick(list(id, anchor_domain), rng);
      t.positive = pick(list(id, other(anchor_domain)), rng);
      int neg_id = id;
      while (neg_id == id) neg_id = pick(eligible_, rng);
      t.negative = pick(list(neg_id, neg_domain), rng);
      out.push_back(t);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& list(int id, Domain d) const { return by_id_.at(id)[d == Domain::VIS ? 0 : 1]; }

  template <typename V>
  static typename V::value_type pick(const V& v, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dist(0, v.size() - 1);
    return v[dist(rng)];
  }

  const Dataset& ds_;
  NegativeDomain rule_;
  std::map<int, std::array<std::vector<std::size_t>, 2>> by_id_;
  std::vector<int> eligible_;
};

inline std::vector<Triplet> sample_triplets(const Dataset& ds, std::size_t batch_size, std::mt19937_64& rng,
                                            NegativeDomain rule = NegativeDomain::SameAsAnchor) {
  return TripletSampler(ds, rule).sample(batch_size, rng);
}

/// Cropped network-ready samples laid out as [anchors | positives | negatives].
struct Batch {
  std::size_t triplets = 0;
  std::vector<CroppedSample> samples;
  std::vector<std::size_t> dataset_index;
  std::vector<std::size_t> labels;  // softmax class per slot
  std::vector<int> identities;
  std::vector<Domain> domains;

  std::size_t anchor(std::size_t b) const { return b; }
  std::size_t positive(std::size_t b) const { return triplets + b; }
  std::size_t negative(std::size_t b) const { return 2 * triplets + b; }

  /// IoU weights between each anchor's and positive's cropped masks.
  std::vector<ComponentWeights> lambdas() const {
    std::vector<ComponentWeights> out;
    for (std::size_t b = 0; b < triplets; ++b)
      out.push_back(component_weights(samples[anchor(b)].masks, samples[positive(b)].masks));
    return out;
  }
};

/// Crops every triplet member. With an rng each sample gets its own random
/// offset (shared by its masks); without one the centre crop is used.
inline Batch assemble_batch(const Dataset& ds, const std::vector<Triplet>& triplets, std::mt19937_64* rng,
                            std::size_t in_size = 144, std::size_t out_size = 128) {
  Batch batch;
  batch.triplets = triplets.size();
  std::vector<std::size_t> order;
  for (const auto& t : triplets) order.push_back(t.anchor);
  for (const auto& t : triplets) order.push_back(t.positive);
  for (const auto& t : triplets) order.push_back(t.negative);
  const auto ids = ds.identities();
  for (std::size_t idx : order) {
    const auto& s = ds.samples.at(idx);
    batch.samples.push_back(random_crop(s.image, s.masks, rng, in_size, out_size));
    batch.dataset_index.push_back(idx);
    batch.labels.push_back(static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), s.identity) - ids.begin()));
    batch.identities.push_back(s.identity);
    batch.domains.push_back(s.domain);
  }
  return batch;
}

/// For each anchor row b, the batch slot with the highest cosine similarity
/// among slots of a different identity in the required domain. `features` is
/// [3B, D] in batch slot order. Falls back to the sampled negative when no
/// candidate exists.
template <typename T>
std::vector<std::size_t> batch_hard_negatives(const Batch& batch, const Tensor<T>& features,
                                              NegativeDomain rule = NegativeDomain::SameAsAnchor) {
  const std::size_t B = batch.triplets, D = features.dim(1);
  std::vector<std::size_t> out(B);
  auto row = [&](std::size_t r) {
    return std::span<const T>(features.values().data() + r * D, D);
  };
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t a = batch.anchor(b);
    const Domain need = rule == NegativeDomain::SameAsAnchor ? batch.domains[a] : other(batch.domains[a]);
    out[b] = batch.negative(b);
    double best = -2.0;
    for (std::size_t r = 0; r < batch.samples.size(); ++r) {
      if (batch.identities[r] == batch.identities[a] || batch.domains[r] != need) continue;
      const double cs = cosine_similarity(row(a), row(r));
      if (cs > best) {
        best = cs;
        out[b] = r;
      }
    }
  }
  return out;
}

}  // namespace pram
