#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "stc/container.hpp"
#include "stc/datasets.hpp"
#include "stc/search.hpp"

using namespace stc;

namespace {

Model stc_model(Rng& r) {
  const VectorSet s = generate({SourceKind::ar1, 12, 1.0, 0.9}, 200, r);
  Model m;
  m.kind = ModelKind::mlstc;
  m.has_whitener = true;
  m.whitener = fit_pca_whitener(s);
  m.stc = mlstc_train(m.whitener.apply(s.data), 3, ThresholdPolicy::relative(0.8));
  m.metadata = R"({"seed":1})";
  return m;
}

Model rrq_model(Rng& r) {
  const VectorSet s = generate({SourceKind::ar1, 16, 1.0, 0.9}, 64, r);
  Model m;
  m.kind = ModelKind::rrq;
  m.has_whitener = true;
  m.whitener = fit_dct_subband_whitener(s, 4, 4, 3);
  RrqOptions o;
  o.L = 2;
  o.m = 8;
  o.mu_schedule = {0.1, kInfiniteMu};
  m.vq = rrq_train(m.whitener.apply(s.data), o, r);
  return m;
}

}  // namespace

TEST(Container, StcModelRoundTripIsBitExact) {
  Rng r(1);
  const Model m = stc_model(r);
  const auto bytes = serialize_model(m);
  const Model back = deserialize_model(bytes);
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(back.stc, m.stc);
  EXPECT_EQ(back.whitener, m.whitener);
  EXPECT_EQ(back.metadata, m.metadata);
}

TEST(Container, VqAndBinaryRoundTrip) {
  Rng r(2);
  const Model m = rrq_model(r);
  const auto bytes = serialize_model(m);
  const Model back = deserialize_model(bytes);
  EXPECT_EQ(serialize_model(back), bytes);
  ASSERT_EQ(back.vq.num_layers(), 2);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(back.vq.layers[l].C, m.vq.layers[l].C);

  Model b;
  b.kind = ModelKind::binary_baseline;
  b.binary = binary_baseline_train(r.normal_matrix(10, 40), 6, r);
  const Model bb = deserialize_model(serialize_model(b));
  EXPECT_EQ(bb.binary, b.binary);
}

TEST(Container, RejectsCorruptInput) {
  Rng r(3);
  auto bytes = serialize_model(stc_model(r));
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_model(truncated), DataError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), DataError);
  auto ver = bytes;
  ver[4] = 99;
  EXPECT_THROW(deserialize_model(ver), DataError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(deserialize_model(extra), DataError);
}

TEST(Codes, TernaryPacking) {
  Vector d(7);
  d << 1, 0, -1, 0, 0, 1, -1;
  const TernaryCode c = TernaryCode::from_dense(d);
  const auto b = pack_ternary(c);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], 0b00100001);
  EXPECT_EQ(b[1], 0b00100100);
  EXPECT_EQ(unpack_ternary(b.data(), 7), c);
  const std::uint8_t invalid[] = {0b11};
  EXPECT_THROW(unpack_ternary(invalid, 1), DataError);
}

TEST(Codes, RoundTripAllPayloads) {
  Rng r(4);
  const Model m = stc_model(r);
  const Matrix F = r.normal_matrix(12, 30);
  CodeFile t;
  t.payload = CodePayload::ternary;
  t.ternary = mlstc_encode(m.whitener.apply(F), m.stc);
  const CodeFile tb = deserialize_codes(serialize_codes(t));
  EXPECT_EQ(tb.ternary, t.ternary);

  const Model q = rrq_model(r);
  CodeFile i;
  i.payload = CodePayload::indices;
  i.indices = rq_encode(q.whitener.apply(r.normal_matrix(16, 9)), q.vq);
  i.index_m = {8, 8};
  const CodeFile ib = deserialize_codes(serialize_codes(i));
  ASSERT_EQ(ib.indices.size(), 2u);
  EXPECT_EQ(ib.indices[1].indices, i.indices[1].indices);

  CodeFile bf;
  bf.payload = CodePayload::binary;
  const BinaryBaseline bl = binary_baseline_train(r.normal_matrix(100, 20), 80, r);
  bf.binary = binary_baseline_encode(r.normal_matrix(100, 5), bl);
  EXPECT_EQ(deserialize_codes(serialize_codes(bf)).binary, bf.binary);
}

TEST(Codes, SaveLoadReencodeIdentical) {
  Rng r(5);
  const Model m = stc_model(r);
  const std::string path = (std::filesystem::temp_directory_path() / "stc_test_model.stcm").string();
  save_model(path, m);
  const Model back = load_model(path);
  std::remove(path.c_str());
  const Matrix F = r.normal_matrix(12, 25);
  CodeFile a, b;
  a.ternary = mlstc_encode(m.whitener.apply(F), m.stc);
  b.ternary = mlstc_encode(back.whitener.apply(F), back.stc);
  EXPECT_EQ(serialize_codes(a), serialize_codes(b));
}

TEST(ModelKind, Names) {
  for (int k = 0; k <= 7; ++k) {
    const auto kind = static_cast<ModelKind>(k);
    EXPECT_EQ(model_kind_from_string(to_string(kind)), kind);
  }
  EXPECT_THROW(model_kind_from_string("pq"), ConfigError);
}
