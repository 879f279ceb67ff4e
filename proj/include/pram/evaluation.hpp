#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/image_io.hpp"
#include "pram/losses.hpp"
#include "pram/trainer.hpp"

namespace pram {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// VIS gallery (one entry per identity) against NIR probes.
struct Protocol {
  std::vector<std::size_t> gallery;  // indices into the embedding records
  std::vector<std::size_t> probes;
  std::vector<int> gallery_ids;
  std::vector<int> probe_ids;
};

/// Gallery: the first VIS record of each identity, in record order. Probes:
/// every NIR record. Each probe identity must be enrolled.
inline Protocol make_protocol(const std::vector<EmbeddingRecord>& records) {
  Protocol p;
  std::set<int> enrolled;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].domain != Domain::VIS || enrolled.count(records[i].identity)) continue;
    enrolled.insert(records[i].identity);
    p.gallery.push_back(i);
    p.gallery_ids.push_back(records[i].identity);
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].domain != Domain::NIR) continue;
    if (!enrolled.count(records[i].identity))
      throw ProtocolError("probe " + records[i].sample_id + " has identity " + std::to_string(records[i].identity) +
                          " with no VIS gallery entry");
    p.probes.push_back(i);
    p.probe_ids.push_back(records[i].identity);
  }
  if (p.gallery.size() < 2) throw ProtocolError("gallery needs at least 2 identities, found " + std::to_string(p.gallery.size()));
  if (p.probes.empty()) throw ProtocolError("no NIR probes");
  return p;
}

/// Explicit gallery/probe lists; duplicate gallery identities are rejected.
inline Protocol make_protocol(const std::vector<int>& gallery_ids, const std::vector<int>& probe_ids) {
  Protocol p;
  std::set<int> seen;
  for (std::size_t i = 0; i < gallery_ids.size(); ++i) {
    if (!seen.insert(gallery_ids[i]).second)
      throw ProtocolError("identity " + std::to_string(gallery_ids[i]) + " appears twice in the gallery");
    p.gallery.push_back(i);
    p.gallery_ids.push_back(gallery_ids[i]);
  }
  for (std::size_t i = 0; i < probe_ids.size(); ++i) {
    if (!seen.count(probe_ids[i]))
      throw ProtocolError("probe identity " + std::to_string(probe_ids[i]) + " is not in the gallery");
    p.probes.push_back(gallery_ids.size() + i);
    p.probe_ids.push_back(probe_ids[i]);
  }
  return p;
}

/// Cosine similarity matrix [probes x gallery], row-major.
struct ScoreMatrix {
  std::size_t probes = 0;
  std::size_t gallery = 0;
  std::vector<double> scores;
  double at(std::size_t p, std::size_t g) const { return scores[p * gallery + g]; }
};

inline ScoreMatrix score_matrix(const std::vector<std::vector<float>>& probe_emb,
                                const std::vector<std::vector<float>>& gallery_emb) {
  ScoreMatrix m{probe_emb.size(), gallery_emb.size(), {}};
  m.scores.reserve(m.probes * m.gallery);
  for (const auto& p : probe_emb)
    for (const auto& g : gallery_emb) {
      if (p.size() != g.size()) throw DimensionError("score_matrix: embedding widths differ");
      m.scores.push_back(cosine_similarity(std::span<const float>(p), std::span<const float>(g)));
    }
  return m;
}

/// Rank of the true identity per probe (1-based). Ties are broken toward the
/// lower gallery index, so a tied impostor ahead of the match outranks it.
inline std::vector<std::size_t> match_ranks(const ScoreMatrix& m, const std::vector<int>& gallery_ids,
                                            const std::vector<int>& probe_ids) {
  std::vector<std::size_t> ranks;
  for (std::size_t p = 0; p < m.probes; ++p) {
    auto it = std::find(gallery_ids.begin(), gallery_ids.end(), probe_ids[p]);
    if (it == gallery_ids.end()) throw ProtocolError("probe identity not enrolled");
    const std::size_t g = static_cast<std::size_t>(it - gallery_ids.begin());
    const double s = m.at(p, g);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < m.gallery; ++j)
      if (j != g && (m.at(p, j) > s || (m.at(p, j) == s && j < g))) ++rank;
    ranks.push_back(rank);
  }
  return ranks;
}

inline double rank1(const ScoreMatrix& m, const std::vector<int>& gallery_ids, const std::vector<int>& probe_ids) {
  const auto r = match_ranks(m, gallery_ids, probe_ids);
  return static_cast<double>(std::count(r.begin(), r.end(), std::size_t{1})) / static_cast<double>(r.size());
}

/// Accuracy at ranks 1..max_rank.
inline std::vector<double> cmc_curve(const ScoreMatrix& m, const std::vector<int>& gallery_ids,
                                     const std::vector<int>& probe_ids, std::size_t max_rank) {
  const auto r = match_ranks(m, gallery_ids, probe_ids);
  std::vector<double> out;
  for (std::size_t k = 1; k <= max_rank; ++k)
    out.push_back(static_cast<double>(std::count_if(r.begin(), r.end(), [&](std::size_t x) { return x <= k; })) /
                  static_cast<double>(r.size()));
  return out;
}

struct VerificationResult {
  double far_target = 0;
  double threshold = 0;
  double achieved_far = 0;
  double vr = 0;
};

/// Verification rate at a false accept rate. A pair is accepted when its
/// score is >= threshold. The threshold is the lowest impostor score whose
/// acceptance rate stays within `far`; if none does, just above the highest
/// impostor score.
inline VerificationResult vr_at_far(std::vector<double> genuine, std::vector<double> impostor, double far) {
  if (genuine.empty() || impostor.empty()) throw ProtocolError("VR@FAR needs genuine and impostor pairs");
  if (!(far > 0 && far < 1)) throw std::invalid_argument("far must lie in (0,1)");
  std::sort(impostor.begin(), impostor.end());
  const double n = static_cast<double>(impostor.size());
  VerificationResult r;
  r.far_target = far;
  r.threshold = std::nextafter(impostor.back(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < impostor.size(); ++i) {
    if (i > 0 && impostor[i] == impostor[i - 1]) continue;
    const double accepted = static_cast<double>(impostor.size() - i);
    if (accepted / n <= far) {
      r.threshold = impostor[i];
      break;
    }
  }
  r.achieved_far = static_cast<double>(std::count_if(impostor.begin(), impostor.end(),
                                                     [&](double s) { return s >= r.threshold; })) / n;
  r.vr = static_cast<double>(std::count_if(genuine.begin(), genuine.end(), [&](double s) { return s >= r.threshold; })) /
         static_cast<double>(genuine.size());
  return r;
}

inline VerificationResult vr_at_far(const ScoreMatrix& m, const std::vector<int>& gallery_ids,
                                    const std::vector<int>& probe_ids, double far) {
  std::vector<double> genuine, impostor;
  for (std::size_t p = 0; p < m.probes; ++p)
    for (std::size_t g = 0; g < m.gallery; ++g)
      (gallery_ids[g] == probe_ids[p] ? genuine : impostor).push_back(m.at(p, g));
  return vr_at_far(genuine, impostor, far);
}

struct EvalReport {
  double rank1 = 0;
  std::vector<VerificationResult> vr;
  std::vector<double> cmc;
  std::size_t gallery = 0;
  std::size_t probes = 0;
};

inline EvalReport evaluate(const std::vector<EmbeddingRecord>& records, const std::vector<double>& fars,
                           std::size_t max_rank) {
  const Protocol p = make_protocol(records);
  std::vector<std::vector<float>> pe, ge;
  for (auto i : p.probes) pe.push_back(records[i].embedding);
  for (auto i : p.gallery) ge.push_back(records[i].embedding);
  const ScoreMatrix m = score_matrix(pe, ge);
  EvalReport r;
  r.gallery = p.gallery.size();
  r.probes = p.probes.size();
  r.rank1 = rank1(m, p.gallery_ids, p.probe_ids);
  for (double f : fars) r.vr.push_back(vr_at_far(m, p.gallery_ids, p.probe_ids, f));
  r.cmc = cmc_curve(m, p.gallery_ids, p.probe_ids, std::min(max_rank, p.gallery.size()));
  return r;
}

inline std::string far_label(double far) {
  std::ostringstream os;
  os << far;
  return "vr_at_far_" + os.str();
}

inline void write_metrics(const std::filesystem::path& dir, const EvalReport& r) {
  std::ofstream m(dir / "metrics.csv");
  if (!m) throw IoError("cannot write " + (dir / "metrics.csv").string());
  m << std::fixed << std::setprecision(6) << "metric,value\n";
  m << "rank1," << r.rank1 << '\n';
  for (const auto& v : r.vr) m << far_label(v.far_target) << ',' << v.vr << '\n';
  std::ofstream c(dir / "cmc.csv");
  if (!c) throw IoError("cannot write " + (dir / "cmc.csv").string());
  c << std::fixed << std::setprecision(6) << "rank,accuracy\n";
  for (std::size_t k = 0; k < r.cmc.size(); ++k) c << k + 1 << ',' << r.cmc[k] << '\n';
}

}  // namespace pram
