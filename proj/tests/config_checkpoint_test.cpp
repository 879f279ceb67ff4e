#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "pram/checkpoint.hpp"
#include "pram/trainer.hpp"

using namespace pram;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pramface_" + name);
}

}  // namespace

TEST(Config, DefaultsCarryTrainingHyperparameters) {
  Config c;
  EXPECT_EQ(c.get_double("train.lr"), 1e-3);
  EXPECT_EQ(c.get_double("train.weight_decay"), 5e-4);
  EXPECT_EQ(c.get_uint("train.batch_size"), 16u);
  EXPECT_EQ(c.get_double("loss.margin"), 0.55);
  EXPECT_EQ(c.get_double("loss.softmax_scale"), 24.0);
  EXPECT_EQ(c.get_uint("train.embed_dim"), 512u);
  EXPECT_EQ(c.get_uint("train.head_dim"), 128u);
  EXPECT_TRUE(c.get_bool("train.pram_on"));
  EXPECT_EQ(c.get("train.cat_on"), "CAT");
  EXPECT_EQ(c.get_doubles("eval.far"), (std::vector<double>{0.01, 0.001}));
}

TEST(Config, UnknownKeyIsHardError) {
  Config c;
  EXPECT_THROW(c.set("train.lrr", "1"), ConfigError);
  EXPECT_THROW(c.merge_text("loss.margn = 0.5\n"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
}

TEST(Config, MergeTextHandlesCommentsAndWhitespace) {
  Config c;
  c.merge_text("# experiment\n\n  train.steps =  20  # short\ntrain.pram_on=false\n");
  EXPECT_EQ(c.get_uint("train.steps"), 20u);
  EXPECT_FALSE(c.get_bool("train.pram_on"));
  EXPECT_THROW(c.merge_text("train.steps 20\n"), ConfigError);
}

TEST(Config, TypedGettersRejectGarbage) {
  Config c;
  c.set("train.lr", "fast");
  EXPECT_THROW(c.get_double("train.lr"), ConfigError);
  c.set("train.lr", "1e-3x");
  EXPECT_THROW(c.get_double("train.lr"), ConfigError);
  c.set("train.steps", "-3");
  EXPECT_THROW(c.get_uint("train.steps"), ConfigError);
  c.set("train.pram_on", "yes");
  EXPECT_THROW(c.get_bool("train.pram_on"), ConfigError);
  c.set("eval.far", "0.01,abc");
  EXPECT_THROW(c.get_doubles("eval.far"), ConfigError);
}

TEST(Config, TextRoundTrip) {
  Config a;
  a.set("train.seed", "99");
  a.set("loss.scale_mode", "feature_scale");
  Config b;
  b.merge_text(a.to_text());
  EXPECT_EQ(a, b);
}

TEST(Config, FileErrors) { EXPECT_THROW(Config().merge_file("/nonexistent/pramface.cfg"), ConfigError); }

TEST(TrainConfig, FromDefaults) {
  const auto t = TrainConfig::from(Config{});
  EXPECT_EQ(t.lr, 1e-3);
  EXPECT_EQ(t.weight_decay, 5e-4);
  EXPECT_EQ(t.batch_size, 16u);
  EXPECT_EQ(t.steps, 500u);
  EXPECT_EQ(t.cat_on, TripletMode::CAT);
  EXPECT_EQ(t.negative_domain, NegativeDomain::SameAsAnchor);
  EXPECT_EQ(t.loss.scale_mode, ScaleMode::LossScale);
  EXPECT_EQ(format_stages(t.trunk), Config{}.get("train.trunk"));
}

TEST(TrainConfig, InvalidValuesAreConfigErrors) {
  auto bad = [](const std::string& key, const std::string& value) {
    Config c;
    c.set(key, value);
    EXPECT_THROW(TrainConfig::from(c), ConfigError) << key << " = " << value;
  };
  bad("train.cat_on", "on");
  bad("train.trunk", "8:5:2");
  bad("train.negative_domain", "either");
  bad("loss.scale_mode", "both");
  bad("train.head_dim", "7");
  bad("train.batch_size", "0");
  bad("loss.margin", "0");
  bad("loss.softmax_scale", "-1");
  bad("train.lr", "-0.1");
  bad("data.crop_size", "200");
  bad("train.freeze_below", "9");
}

TEST(TripletMode, Parse) {
  EXPECT_EQ(parse_triplet_mode("off"), TripletMode::Off);
  EXPECT_EQ(parse_triplet_mode("plain_C"), TripletMode::PlainC);
  EXPECT_EQ(parse_triplet_mode("CAT"), TripletMode::CAT);
  EXPECT_THROW(parse_triplet_mode("cat"), ConfigError);
}

template <typename T>
class CheckpointRoundTrip : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(CheckpointRoundTrip, Precisions);

TYPED_TEST(CheckpointRoundTrip, BitIdentical) {
  using T = TypeParam;
  std::mt19937_64 rng(1);
  ParameterStore<T> a;
  a.add("w", {3, 4}, he_normal<T>(12, 4, rng));
  a.add("b", {4}, std::vector<T>{T(-0.0), std::numeric_limits<T>::denorm_min(), T(1) / T(3), T(1e30)});
  const auto path = temp_file("ckpt_roundtrip");
  write_checkpoint(path, "hello = world\n", a);
  const auto data = read_checkpoint(path);
  EXPECT_EQ(data.text, "hello = world\n");
  ASSERT_EQ(data.tensors.size(), 2u);
  EXPECT_EQ(data.tensors[0].dtype, (std::is_same_v<T, double> ? DType::F64 : DType::F32));
  ParameterStore<T> b;
  b.add("b", {4}, std::vector<T>(4, T(0)));
  b.add("w", {3, 4}, std::vector<T>(12, T(0)));
  load_parameters(data, b);
  for (const char* name : {"w", "b"}) {
    const auto& x = a.get(name).tensor.values();
    const auto& y = b.get(name).tensor.values();
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(T)), 0) << name;
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  ParameterStore<float> s;
  s.add("p", {2}, {1.0f, 2.0f});
  const auto path = temp_file("ckpt_layout");
  write_checkpoint(path, "ab", s);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 18u);
  EXPECT_EQ(bytes.substr(0, 8), "PRAMCK01");
  EXPECT_EQ(bytes[8], 2);
  for (int i = 9; i < 16; ++i) EXPECT_EQ(bytes[i], 0);
  EXPECT_EQ(bytes.substr(16, 2), "ab");
  // count(4) + name len(4) + "p" + dtype(1) + rank(4) + dim(8) + 2 floats
  EXPECT_EQ(bytes.size(), 18u + 4 + 4 + 1 + 1 + 4 + 8 + 8);
  std::filesystem::remove(path);
}

TEST(Checkpoint, Errors) {
  const auto path = temp_file("ckpt_bad");
  std::ofstream(path, std::ios::binary) << "NOTACKPT";
  EXPECT_THROW(read_checkpoint(path), IoError);
  EXPECT_THROW(read_checkpoint(temp_file("ckpt_missing_file")), IoError);

  ParameterStore<float> s;
  s.add("p", {2}, {1.0f, 2.0f});
  write_checkpoint(path, "", s);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(read_checkpoint(path), IoError);

  write_checkpoint(path, "", s);
  ParameterStore<float> other;
  other.add("q", {2}, {0, 0});
  EXPECT_THROW(load_parameters(read_checkpoint(path), other), IoError);
  ParameterStore<float> wrong_shape;
  wrong_shape.add("p", {3}, {0, 0, 0});
  EXPECT_THROW(load_parameters(read_checkpoint(path), wrong_shape), IoError);
  std::filesystem::remove(path);
}
