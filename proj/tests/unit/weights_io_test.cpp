#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fer/model.hpp"
#include "fer/rng.hpp"
#include "fer/weights_io.hpp"

namespace fer {
namespace {

namespace fs = std::filesystem;

// Random parameters and running statistics so the round trip is exercised on
// arbitrary bit patterns, not just the initializer's.
ModelGraph random_model(std::uint64_t seed) {
  Rng rng(seed);
  using S = LayerSpec;
  std::vector<S> specs{S::conv(1 + static_cast<int>(rng.below(4)), 3), S::batch_norm(), S::relu(),
                       S::max_pool(2, 2, rng.bernoulli(0.5)), S::flatten(), S::dense(5), S::dropout(Scalar(0.2)),
                       S::dense(7)};
  ModelGraph m(Arch::kCustom, specs, {1, 8, 8}, seed);
  for (Layer& l : m.layers()) {
    for (Parameter& p : l.params)
      for (auto& v : p.value.values()) v = static_cast<Scalar>(rng.normal());
    if (!l.running.mean.empty()) {
      for (auto& v : l.running.mean.values()) v = static_cast<Scalar>(rng.normal());
      for (auto& v : l.running.var.values()) v = static_cast<Scalar>(rng.uniform(0.1, 3));
    }
  }
  m.info() = {static_cast<int>(rng.below(300)), rng.uniform()};
  return m;
}

void expect_same(const ModelGraph& a, const ModelGraph& b) {
  ASSERT_EQ(a.layers().size(), b.layers().size());
  EXPECT_EQ(a.arch(), b.arch());
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    EXPECT_EQ(a.layers()[l].spec, b.layers()[l].spec);
    ASSERT_EQ(a.layers()[l].params.size(), b.layers()[l].params.size());
    for (std::size_t p = 0; p < a.layers()[l].params.size(); ++p)
      EXPECT_EQ(a.layers()[l].params[p].value, b.layers()[l].params[p].value);
    EXPECT_EQ(a.layers()[l].running.mean, b.layers()[l].running.mean);
    EXPECT_EQ(a.layers()[l].running.var, b.layers()[l].running.var);
  }
  EXPECT_EQ(a.info().epochs, b.info().epochs);
  EXPECT_EQ(a.info().val_accuracy, b.info().val_accuracy);
}

TEST(WeightsIo, RandomModelsRoundTripBitExactly) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const ModelGraph m = random_model(seed);
    expect_same(m, deserialize_weights(serialize_weights(m)));
  }
}

TEST(WeightsIo, FiveLayerFileRoundTrip) {
  const fs::path path = fs::temp_directory_path() / "fer_weights_roundtrip.ferw";
  ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 3);
  Rng rng(1);
  Tensor x({2, 1, 48, 48});
  for (auto& v : x.values()) v = static_cast<Scalar>(rng.uniform());
  m.logits(x, Mode::kTrain, 1);  // non-trivial running statistics
  save_weights(m, path);
  const ModelGraph loaded = load_weights(path);
  expect_same(m, loaded);
  EXPECT_EQ(loaded.param_count(), m.param_count());
  EXPECT_EQ(loaded.predict(x), m.predict(x));
  fs::remove(path);
}

WeightsError::Code load_error(const std::string& bytes) {
  try {
    deserialize_weights(bytes);
  } catch (const WeightsError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return WeightsError::Code::kIo;
}

TEST(WeightsIo, DistinctErrors) {
  const std::string good = serialize_weights(random_model(1));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(load_error(bad_magic), WeightsError::Code::kBadMagic);
  EXPECT_EQ(load_error(good.substr(0, good.size() - 3)), WeightsError::Code::kTruncated);
  EXPECT_EQ(load_error(good.substr(0, 7)), WeightsError::Code::kTruncated);
  EXPECT_EQ(load_error(good + "xx"), WeightsError::Code::kTruncated);
  EXPECT_THROW(load_weights("/nonexistent/weights.ferw"), WeightsError);
}

TEST(WeightsIo, ShapeMismatchAgainstArchitecture) {
  // A five-layer header whose manifest is edited to a wrong shape.
  const ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 0);
  std::string bytes = serialize_weights(m);
  const std::string needle = "[32,1,5,5]";
  const auto pos = bytes.find(needle);
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, needle.size(), "[32,1,5,4]");
  EXPECT_EQ(load_error(bytes), WeightsError::Code::kShapeMismatch);
}

TEST(WeightsIo, CorruptMetadata) {
  std::string bytes = serialize_weights(random_model(2));
  bytes[9] = '{';
  bytes[10] = '{';
  EXPECT_EQ(load_error(bytes), WeightsError::Code::kBadMetadata);
}

}  // namespace
}  // namespace fer
