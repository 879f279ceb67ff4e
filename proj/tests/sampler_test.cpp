#include <gtest/gtest.h>

#include <random>
#include <set>
#include <tuple>

#include "pram/sampler.hpp"

using namespace pram;

namespace {

FaceSample fake(int identity, Domain d, std::size_t k) {
  FaceSample s;
  s.sample_id = std::to_string(identity) + "/" + to_string(d) + "_" + std::to_string(k);
  s.identity = identity;
  s.domain = d;
  s.image = Image(1, 144, 144);
  for (auto& m : s.masks) m = BinaryMask(144, 144);
  // A small square per component so crops and IoU have something to see.
  for (std::size_t i = 0; i < kNumParts; ++i)
    for (std::size_t r = 20 + 20 * i; r < 30 + 20 * i; ++r)
      for (std::size_t c = 40 + k; c < 60 + k; ++c) s.masks[i].set(r, c);
  return s;
}

Dataset fake_dataset(int ids, std::size_t per_domain) {
  Dataset ds;
  for (int id = 0; id < ids; ++id)
    for (Domain d : {Domain::VIS, Domain::NIR})
      for (std::size_t k = 0; k < per_domain; ++k) ds.samples.push_back(fake(10 * id + 3, d, k));
  return ds;
}

}  // namespace

TEST(Sampler, InvariantsHoldOverTenThousandDraws) {
  const Dataset ds = fake_dataset(6, 3);
  std::mt19937_64 rng(1);
  TripletSampler sampler(ds);
  std::size_t vis_anchors = 0, total = 0;
  while (total < 10000) {
    for (const auto& t : sampler.sample(16, rng)) {
      ASSERT_TRUE(valid_triplet(ds, t));
      vis_anchors += ds.samples[t.anchor].domain == Domain::VIS;
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(vis_anchors) / static_cast<double>(total), 0.5, 0.05);
}

TEST(Sampler, PositiveRuleSwitchesNegativeDomain) {
  const Dataset ds = fake_dataset(4, 2);
  std::mt19937_64 rng(2);
  for (const auto& t : sample_triplets(ds, 200, rng, NegativeDomain::SameAsPositive)) {
    EXPECT_TRUE(valid_triplet(ds, t, NegativeDomain::SameAsPositive));
    EXPECT_FALSE(valid_triplet(ds, t, NegativeDomain::SameAsAnchor));
  }
}

TEST(Sampler, TwoIdentityBruteForce) {
  const Dataset ds = fake_dataset(2, 1);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> valid, seen;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t n = 0; n < 4; ++n)
        if (valid_triplet(ds, {a, p, n})) valid.insert({a, p, n});
  ASSERT_EQ(valid.size(), 4u);
  std::mt19937_64 rng(3);
  for (const auto& t : sample_triplets(ds, 400, rng)) seen.insert({t.anchor, t.positive, t.negative});
  EXPECT_EQ(seen, valid);
}

TEST(Sampler, SameSeedSameSequence) {
  const Dataset ds = fake_dataset(5, 3);
  std::mt19937_64 a(42), b(42), c(43);
  const auto ta = sample_triplets(ds, 64, a), tb = sample_triplets(ds, 64, b), tc = sample_triplets(ds, 64, c);
  EXPECT_EQ(ta, tb);
  EXPECT_NE(ta, tc);
}

TEST(Sampler, InsufficientCoverageNamesCount) {
  Dataset ds = fake_dataset(1, 2);
  ds.samples.push_back(fake(99, Domain::VIS, 0));
  try {
    TripletSampler s(ds);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("found 1 of 2"), std::string::npos) << e.what();
  }
}

TEST(AssembleBatch, SixteenTripletsGiveFortyEightSlots) {
  const Dataset ds = fake_dataset(4, 3);
  std::mt19937_64 rng(5);
  const auto triplets = sample_triplets(ds, 16, rng);
  const Batch b = assemble_batch(ds, triplets, &rng);
  ASSERT_EQ(b.samples.size(), 48u);
  EXPECT_EQ(b.labels.size(), 48u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(b.dataset_index[b.anchor(i)], triplets[i].anchor);
    EXPECT_EQ(b.dataset_index[b.positive(i)], triplets[i].positive);
    EXPECT_EQ(b.dataset_index[b.negative(i)], triplets[i].negative);
  }
  for (std::size_t s = 0; s < 48; ++s) {
    EXPECT_EQ(b.labels[s], ds.class_index(b.identities[s]));
    EXPECT_EQ(b.samples[s].image.height, 128u);
    EXPECT_EQ(b.samples[s].masks.size(), kNumParts);
  }
}

TEST(AssembleBatch, EvaluationModeUsesCentreCrop) {
  const Dataset ds = fake_dataset(3, 2);
  std::mt19937_64 rng(6);
  const auto triplets = sample_triplets(ds, 4, rng);
  const Batch a = assemble_batch(ds, triplets, nullptr), b = assemble_batch(ds, triplets, nullptr);
  for (std::size_t s = 0; s < a.samples.size(); ++s) {
    EXPECT_EQ(a.samples[s].offset, (CropOffset{8, 8}));
    EXPECT_EQ(a.samples[s].image, b.samples[s].image);
  }
}

TEST(AssembleBatch, MasksShiftWithTheirImage) {
  const Dataset ds = fake_dataset(3, 2);
  std::mt19937_64 rng(7);
  const Batch b = assemble_batch(ds, sample_triplets(ds, 8, rng), &rng);
  for (std::size_t s = 0; s < b.samples.size(); ++s) {
    const auto& src = ds.samples[b.dataset_index[s]];
    const auto [dr, dc] = b.samples[s].offset;
    for (std::size_t i = 0; i < kNumParts; ++i) {
      BinaryMask shifted(128, 128);
      for (std::size_t r = 0; r < 128; ++r)
        for (std::size_t c = 0; c < 128; ++c) shifted.set(r, c, src.masks[i].at(r + dr, c + dc));
      EXPECT_EQ(b.samples[s].masks[i], shifted);
      if (!shifted.empty()) EXPECT_EQ(iou(b.samples[s].masks[i], shifted), 1.0);
    }
  }
}

TEST(AssembleBatch, LambdasComeFromCroppedMasks) {
  const Dataset ds = fake_dataset(3, 2);
  std::mt19937_64 rng(8);
  const Batch b = assemble_batch(ds, sample_triplets(ds, 6, rng), nullptr);
  const auto lam = b.lambdas();
  ASSERT_EQ(lam.size(), 6u);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < kNumParts; ++i)
      EXPECT_EQ(lam[t][i], iou(b.samples[b.anchor(t)].masks[i], b.samples[b.positive(t)].masks[i]));
}

TEST(BatchHard, PicksMostSimilarValidSlot) {
  const Dataset ds = fake_dataset(3, 1);
  std::vector<Triplet> ts{{0, 1, 2}, {2, 3, 4}};
  const Batch b = assemble_batch(ds, ts, nullptr);
  Tensor<double> f({6, 2}, {1, 0, 0, 1, 1, 0.1, 0, 1, 0.2, 1, 0.9, 0.3});
  const auto hard = batch_hard_negatives(b, f);
  // VIS slots of other identities for anchor 0: 1, 4 and 5.
  EXPECT_EQ(hard[0], 5u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NE(b.identities[hard[i]], b.identities[b.anchor(i)]);
    EXPECT_EQ(b.domains[hard[i]], b.domains[b.anchor(i)]);
  }
}
