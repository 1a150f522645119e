#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cbcs/rng.hpp"
#include "cbcs/tensor_io.hpp"
#include "test_util.hpp"

using namespace cbcs;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected cbcs::Error";
  return ErrorCode::InvalidArgument;
}

EmbeddingMatrix random_matrix(Rng& rng, bool normalized) {
  const auto rows = static_cast<std::size_t>(rng.uniform_index(20));
  const auto cols = static_cast<std::size_t>(1 + rng.uniform_index(16));
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = static_cast<float>(rng.normal() * 3.0);
  EmbeddingMatrix m(rows, cols, std::move(data));
  if (normalized && rows > 0) return m.normalized_copy();
  return m;
}

}  // namespace

TEST(Embeddings, RoundTripSmallMatrix) {
  testutil::TempDir dir;
  const auto m = EmbeddingMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  write_embeddings(dir.file("m.cbe"), m);
  EXPECT_EQ(read_embeddings(dir.file("m.cbe")), m);
  const auto bytes = encode_embeddings(m);
  EXPECT_EQ(bytes.size(), kEmbeddingHeaderSize + 6 * 4);
  EXPECT_EQ(encode_embeddings(read_embeddings(dir.file("m.cbe"))), bytes);
}

TEST(Embeddings, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode_embeddings(EmbeddingMatrix::from_rows({{1.0f}}, true));
  ASSERT_EQ(bytes.size(), 29u);
  EXPECT_EQ(bytes.substr(0, 4), "CBE1");
  EXPECT_EQ(bytes[4], 1);  // version, low byte first
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[8], 1);   // rows
  EXPECT_EQ(bytes[16], 1);  // cols
  EXPECT_EQ(bytes[24], 1);  // normalized flag
  // 1.0f = 0x3f800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[25]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[27]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(bytes[28]), 0x3f);
}

TEST(Embeddings, EmptyMatrixIsValid) {
  testutil::TempDir dir;
  EmbeddingMatrix m(0, 7, {});
  write_embeddings(dir.file("e.cbe"), m);
  const auto back = read_embeddings(dir.file("e.cbe"));
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.cols(), 7u);
}

TEST(Embeddings, RejectsCorruptFiles) {
  const auto good = encode_embeddings(EmbeddingMatrix::from_rows({{1, 2, 3}, {4, 5, 6}}));

  auto bad_magic = good;
  bad_magic[3] = '2';
  EXPECT_EQ(code_of([&] { decode_embeddings(bad_magic); }), ErrorCode::BadMagic);

  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(code_of([&] { decode_embeddings(bad_version); }), ErrorCode::VersionMismatch);

  EXPECT_EQ(code_of([&] { decode_embeddings(good.substr(0, good.size() - 1)); }), ErrorCode::TruncatedPayload);
  EXPECT_EQ(code_of([&] { decode_embeddings(good + "xxxx"); }), ErrorCode::TruncatedPayload);
  EXPECT_EQ(code_of([&] { decode_embeddings(good.substr(0, 10)); }), ErrorCode::TruncatedPayload);

  // Header claims 3 rows; payload holds 2.
  auto wrong_rows = good;
  wrong_rows[8] = 3;
  EXPECT_EQ(code_of([&] { decode_embeddings(wrong_rows); }), ErrorCode::TruncatedPayload);

  // Absurd row count must not overflow the size check.
  auto huge = good;
  for (int i = 8; i < 16; ++i) huge[i] = static_cast<char>(0xff);
  EXPECT_EQ(code_of([&] { decode_embeddings(huge); }), ErrorCode::TruncatedPayload);

  auto nan = good;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + kEmbeddingHeaderSize, &q, 4);
  EXPECT_EQ(code_of([&] { decode_embeddings(nan); }), ErrorCode::NonFiniteValue);
}

TEST(Embeddings, NormalizedFlagIsEnforced) {
  EXPECT_EQ(code_of([] { EmbeddingMatrix::from_rows({{3, 4}}, true); }), ErrorCode::NotNormalized);
  const auto unit = EmbeddingMatrix::from_rows({{3, 4}}).normalized_copy();
  EXPECT_TRUE(unit.normalized());
  EXPECT_NEAR(unit.row_norm(0), 1.0, 1e-6);
}

TEST(Embeddings, RoundTripProperty) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_matrix(rng, trial % 2 == 0);
    const auto bytes = encode_embeddings(m);
    const auto back = decode_embeddings(bytes);
    ASSERT_EQ(back, m);
    ASSERT_EQ(encode_embeddings(back), bytes);
  }
}

TEST(Labels, RoundTripAndValidation) {
  testutil::TempDir dir;
  LabelVector v{{0, 1, 2}, 3};
  write_labels(dir.file("l.cbl"), v);
  EXPECT_EQ(read_labels(dir.file("l.cbl")), v);

  LabelVector empty{{}, 3};
  write_labels(dir.file("e.cbl"), empty);
  EXPECT_EQ(read_labels(dir.file("e.cbl")).size(), 0u);

  EXPECT_EQ(code_of([&] { write_labels(dir.file("bad.cbl"), LabelVector{{5}, 3}); }), ErrorCode::OutOfRangeLabel);

  // Hand-built file with an out-of-range label.
  std::string bytes = encode_labels(LabelVector{{0, 1}, 3});
  bytes[kLabelHeaderSize + 4] = 5;
  EXPECT_EQ(code_of([&] { decode_labels(bytes); }), ErrorCode::OutOfRangeLabel);
  EXPECT_EQ(code_of([&] { decode_labels(bytes.substr(0, bytes.size() - 2)); }), ErrorCode::TruncatedPayload);
  EXPECT_EQ(code_of([&] { decode_labels("CBE1" + bytes.substr(4)); }), ErrorCode::BadMagic);
}

TEST(Labels, RoundTripProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    LabelVector v;
    v.num_classes = static_cast<std::uint32_t>(1 + rng.uniform_index(50));
    v.labels.resize(rng.uniform_index(40));
    for (auto& l : v.labels) l = static_cast<std::uint32_t>(rng.uniform_index(v.num_classes));
    ASSERT_EQ(decode_labels(encode_labels(v)), v);
  }
}

TEST(ScoreTableIo, RoundTripWithMarginsSideFile) {
  testutil::TempDir dir;
  ScoreTable t;
  t.entries.push_back({0, 1, std::nullopt, 0.4, std::vector<double>{0.2, 0.4, 0.6}});
  t.entries.push_back({1, 0, 2u, -0.125, std::vector<double>{-0.125}});
  write_score_table(dir.file("s.jsonl"), t);
  write_margins(dir.file("m.jsonl"), t);

  const auto back = read_score_table(dir.file("s.jsonl"), dir.file("m.jsonl"));
  EXPECT_EQ(back, t);

  const auto no_margins = read_score_table(dir.file("s.jsonl"));
  EXPECT_FALSE(no_margins.entries[0].margins.has_value());
  EXPECT_EQ(no_margins.entries[1].pseudo_label, 2u);

  const auto text = encode_score_table(t);
  EXPECT_EQ(text.substr(0, text.find('\n')), R"({"index":0,"label":1,"pseudo_label":null,"aum":0.4})");
}

TEST(ScoreTableIo, AumMustMatchMargins) {
  ScoreTable t;
  t.entries.push_back({0, 0, std::nullopt, 0.5, std::vector<double>{0.2, 0.4}});
  EXPECT_THROW(t.validate(), Error);
  t.entries[0].aum = 0.3;
  EXPECT_NO_THROW(t.validate());
  t.entries.push_back({0, 0, std::nullopt, 0.1, std::nullopt});
  EXPECT_THROW(t.validate(), Error);  // duplicate index
}

TEST(ScoreTableIo, DoublesRoundTripExactly) {
  Rng rng(11);
  ScoreTable t;
  for (std::size_t i = 0; i < 100; ++i) t.entries.push_back({i, 0, std::nullopt, rng.normal() / 3.0, std::nullopt});
  EXPECT_EQ(decode_score_table(encode_score_table(t)), t);
}

TEST(CoresetIo, RoundTripAndHeader) {
  testutil::TempDir dir;
  Coreset c;
  c.indices = {1, 4, 9};
  c.meta.method = "ccs";
  c.meta.spec = SelectionSpec{0.7, 0.1, 50, 3, true};
  c.meta.pool_size = 10;
  c.meta.dataset_hash = content_hash("dataset");
  c.meta.score_hash = content_hash("scores");
  write_coreset(dir.file("c.txt"), c);
  EXPECT_EQ(read_coreset(dir.file("c.txt")), c);

  const auto text = encode_coreset(c);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(text.find("\n1\n4\n9\n"), std::string::npos);

  auto broken = text.substr(0, text.size() - 2);  // drop last index
  EXPECT_THROW(decode_coreset(broken), Error);
}

TEST(Hashing, Fnv1aKnownValues) {
  // Reference values of 64-bit FNV-1a.
  EXPECT_EQ(content_hash(""), "fnv1a64:cbf29ce484222325");
  EXPECT_EQ(content_hash("a"), "fnv1a64:af63dc4c8601ec8c");
}
