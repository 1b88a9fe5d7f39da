#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "mtk/checkpoint.hpp"
#include "mtk/config.hpp"
#include "mtk/error.hpp"
#include "test_util.hpp"

using namespace mtk;

namespace {

std::vector<checkpoint::Named> sample() {
  Rng rng(1);
  return {{"a.w", testutil::random({2, 3}, rng)}, {"b", Tensor({4}, 0.25)}, {"s", Tensor::scalar(7)}};
}

}  // namespace

TEST(Checkpoint, ExactByteLayout) {
  std::stringstream ss;
  checkpoint::write(ss, {{"ab", Tensor({2}, std::vector<double>{1.0, -2.0})}});
  const std::string b = ss.str();
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 2 + 2 + 1 + 1 + 4 + 16);
  EXPECT_EQ(b.substr(0, 4), "MTKP");
  EXPECT_EQ(b[4], 1);  // version, little-endian
  EXPECT_EQ(b[8], 1);  // tensor count
  EXPECT_EQ(b[12], 2);  // name length
  EXPECT_EQ(b.substr(14, 2), "ab");
  EXPECT_EQ(b[16], 1);  // f64
  EXPECT_EQ(b[17], 1);  // ndim
  EXPECT_EQ(b[18], 2);  // dim 0
  double v;
  std::memcpy(&v, b.data() + 22 + 8, 8);
  EXPECT_EQ(v, -2.0);
}

TEST(Checkpoint, RoundTripF64AndF32) {
  std::stringstream ss;
  checkpoint::write(ss, sample());
  const auto back = checkpoint::read(ss);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].name, sample()[i].name);
    EXPECT_TRUE(testutil::identical(back[i].value, sample()[i].value));
  }
  std::stringstream sf;
  checkpoint::write(sf, sample(), DType::f32);
  const auto f = checkpoint::read(sf);
  EXPECT_EQ(f[0].value[1], static_cast<double>(static_cast<float>(sample()[0].value[1])));
  EXPECT_EQ(f[2].value.ndim(), 0);
}

TEST(Checkpoint, CorruptStreamsRejected) {
  std::stringstream ss;
  checkpoint::write(ss, sample());
  const std::string good = ss.str();
  auto rejects = [](std::string bytes) {
    std::stringstream in(bytes);
    EXPECT_THROW(checkpoint::read(in), SchemaError);
  };
  std::string bad = good;
  bad[0] = 'X';
  rejects(bad);
  bad = good;
  bad[4] = 9;
  rejects(bad);
  rejects(good.substr(0, good.size() - 3));
  bad = good;
  bad[12 + 2 + 3] = 7;  // dtype of the first tensor
  rejects(bad);
}

TEST(Checkpoint, StoreShapeMismatch) {
  ParamStore a, b;
  a.add("w", Tensor({2, 2}));
  b.add("w", Tensor({2, 3}));
  const auto path = std::filesystem::temp_directory_path() / "mtk_store_test.mtkp";
  checkpoint::save_store(path, a);
  EXPECT_THROW(checkpoint::load_store(path, b), SchemaError);
  ParamStore c;
  c.add("w", Tensor({2, 2}, 5.0));
  checkpoint::load_store(path, c);
  EXPECT_EQ(c.get("w")[3], 0.0);
  std::filesystem::remove(path);
}

TEST(Config, JsonRoundTripAndStrictness) {
  RunConfig c;
  c.model.channels = 16;
  c.model.ctm = CtmKind::fctm;
  c.model.head = HeadKind::lite;
  c.model.directions = {scan2d::Direction::D2};
  c.train.lr = 5e-4;
  const auto back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.model.ctm, CtmKind::fctm);
  EXPECT_EQ(back.model.directions.size(), 1u);

  auto j = to_json(c);
  j["model"]["bogus"] = 1;
  EXPECT_THROW(run_config_from_json(j), SchemaError);
  j = to_json(c);
  j["model"]["channels"] = "wide";
  EXPECT_THROW(run_config_from_json(j), SchemaError);
  j = to_json(c);
  j["model"]["ctm"] = "x";
  EXPECT_THROW(run_config_from_json(j), SchemaError);
  EXPECT_EQ(run_config_from_json(nlohmann::json::object()).model.channels, 32);
}
