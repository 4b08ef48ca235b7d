#include <gtest/gtest.h>

#include <random>

#include "polyvits/context/features.hpp"
#include "polyvits/frontend/backend.hpp"

namespace polyvits {
namespace {

// Frozen from tests/oracles/stub_features.py 42 "hello quiet world" 8
const double kOracleRows[3][8] = {
    {-0.32894705142242076, 0.17163583252319295, 0.47650077853317946, 0.628538371223564, -0.12478464365798114,
     0.30310549037924905, 0.36257563555152145, -0.03628036969195144},
    {-0.27889826203263257, -0.048657860926038965, -0.15952608120191536, 0.6105280990469603, 0.4987462505356821,
     0.2051878552843586, 0.11260076008133381, 0.4670398614093383},
    {0.6659773615258453, -0.11693339142886502, 0.3278581368691679, -0.10725339005636547, -0.530853224695966,
     -0.15285000747830535, -0.2943929003000612, -0.17880446753592877},
};

ContextExtractorSpec stub_spec(int dim = 8) { return {ExtractorKind::kStub, dim, "42"}; }

PhonemeSequence sequence_with_spans(const std::vector<int>& lengths) {
  PhonemeSequence seq;
  for (std::size_t w = 0; w < lengths.size(); ++w) {
    seq.word_spans.push_back({static_cast<int>(w), lengths[w]});
    for (int k = 0; k < lengths[w]; ++k) seq.phonemes.push_back("p" + std::to_string(w) + "_" + std::to_string(k));
  }
  return seq;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kUsage;
}

TEST(StubExtractor, ShapeAndFinite) {
  const auto f = extract_word_features("hello quiet world", resolve_backend("english"), stub_spec());
  EXPECT_EQ(f.level, FeatureLevel::kWord);
  EXPECT_EQ(f.rows(), 3);
  EXPECT_EQ(f.dim(), 8);
  EXPECT_TRUE(f.matrix.allFinite());
}

TEST(StubExtractor, MatchesIndependentOracle) {
  const auto f = extract_word_features("hello quiet world", resolve_backend("english"), stub_spec());
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(f.matrix(i, j), kOracleRows[i][j], 1e-15) << i << "," << j;
  }
}

TEST(StubExtractor, RowsHaveUnitNorm) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int words = 1 + static_cast<int>(rng() % 9);
    for (int w = 0; w < words; ++w) text += "w" + std::to_string(rng() % 1000) + " ";
    const auto f = extract_word_features(text, resolve_backend("hindi"), stub_spec(16));
    for (Eigen::Index r = 0; r < f.rows(); ++r) EXPECT_NEAR(f.matrix.row(r).norm(), 1.0, 1e-6);
  }
}

TEST(StubExtractor, DeterministicAndPositionKeyed) {
  const auto tag = resolve_backend("english");
  const auto a = extract_word_features("river river", tag, stub_spec());
  const auto b = extract_word_features("river river", tag, stub_spec());
  EXPECT_EQ(a.matrix, b.matrix);
  EXPECT_NE(a.matrix.row(0), a.matrix.row(1));
  const auto other_seed = extract_word_features("river river", tag, {ExtractorKind::kStub, 8, "7"});
  EXPECT_NE(a.matrix, other_seed.matrix);
}

TEST(StubExtractor, WordsFollowPhonemizerSegmentation) {
  const auto tag = resolve_backend("english");
  const auto f = extract_word_features("  Hello,   world !", tag, stub_spec());
  const auto seq = phonemize("  Hello,   world !", tag, LexiconBackend());
  EXPECT_EQ(static_cast<std::size_t>(f.rows()), seq.word_count());
}

TEST(StubExtractor, ChhattisgarhiUsesRawTextNotAlias) {
  const auto cg = extract_word_features("नमस्ते भारत", resolve_backend("chhattisgarhi"), stub_spec());
  const auto hi = extract_word_features("नमस्ते भारत", resolve_backend("hindi"), stub_spec());
  EXPECT_EQ(cg.matrix, hi.matrix);  // the stub ignores language; the text is what is keyed
  EXPECT_EQ(resolve_backend("chhattisgarhi").code, "chhattisgarhi");
}

TEST(Extractor, PretrainedUnavailableWithoutPlugin) {
  EXPECT_EQ(kind_of([] { make_extractor({ExtractorKind::kPretrained, 768, "indic-bert"}); }),
            ErrorKind::kExtractorUnavailable);
}

class FixedDimExtractor final : public ContextExtractor {
 public:
  explicit FixedDimExtractor(int dim) : dim_(dim) {}
  std::string identifier() const override { return "fixed"; }
  Matrix extract(const std::vector<std::string>& words, const LanguageTag&) override {
    // two subwords per word, pooled back to words
    Matrix sub(static_cast<Eigen::Index>(2 * words.size()), dim_);
    std::vector<int> owner;
    for (std::size_t w = 0; w < words.size(); ++w) {
      sub.row(static_cast<Eigen::Index>(2 * w)).setConstant(static_cast<double>(w));
      sub.row(static_cast<Eigen::Index>(2 * w + 1)).setConstant(static_cast<double>(w) + 1.0);
      owner.push_back(static_cast<int>(w));
      owner.push_back(static_cast<int>(w));
    }
    return mean_pool_subwords(sub, owner, static_cast<int>(words.size()));
  }

 private:
  int dim_;
};

TEST(Extractor, RegisteredPretrainedPluginIsUsed) {
  ExtractorRegistry::instance().add("fixed-model", [](const ContextExtractorSpec& s) {
    return std::make_unique<FixedDimExtractor>(s.dim);
  });
  const ContextExtractorSpec spec{ExtractorKind::kPretrained, 4, "fixed-model"};
  const auto f = extract_word_features("a b c", resolve_backend("english"), spec);
  ExtractorRegistry::instance().remove("fixed-model");
  ASSERT_EQ(f.rows(), 3);
  EXPECT_DOUBLE_EQ(f.matrix(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(f.matrix(2, 3), 2.5);
}

TEST(Extractor, DimensionMismatch) {
  FixedDimExtractor extractor(5);
  EXPECT_EQ(kind_of([&] { extract_word_features("a b", resolve_backend("english"), extractor, stub_spec(8)); }),
            ErrorKind::kDimensionMismatch);
}

TEST(Extractor, EmptyText) {
  EXPECT_EQ(kind_of([] { extract_word_features("  ", resolve_backend("english"), stub_spec()); }),
            ErrorKind::kEmptyText);
}

TEST(Extractor, MemoizationReturnsCachedRows) {
  MemoizedFeatures memo(stub_spec());
  const auto tag = resolve_backend("marathi");
  const Matrix first = memo.get("a b", tag).matrix;
  memo.get("a b", tag);
  memo.get("a b", resolve_backend("hindi"));
  EXPECT_EQ(memo.size(), 2u);
  EXPECT_EQ(memo.get("a b", tag).matrix, first);
}

TEST(Replicate, TwoWords) {
  ContextFeatures words{FeatureLevel::kWord, Matrix(2, 2)};
  words.matrix << 1, 2, 3, 4;
  const auto out = replicate_to_phonemes(words, sequence_with_spans({3, 2}));
  EXPECT_EQ(out.level, FeatureLevel::kPhoneme);
  Matrix expected(5, 2);
  expected << 1, 2, 1, 2, 1, 2, 3, 4, 3, 4;
  EXPECT_EQ(out.matrix, expected);
}

TEST(Replicate, SingleWord) {
  ContextFeatures words{FeatureLevel::kWord, Matrix::Constant(1, 3, 0.25)};
  const auto out = replicate_to_phonemes(words, sequence_with_spans({6}));
  EXPECT_EQ(out.matrix, Matrix::Constant(6, 3, 0.25));
}

TEST(Replicate, WordCountMismatch) {
  ContextFeatures words{FeatureLevel::kWord, Matrix::Zero(2, 3)};
  EXPECT_EQ(kind_of([&] { replicate_to_phonemes(words, sequence_with_spans({1, 1, 1})); }),
            ErrorKind::kWordCountMismatch);
}

TEST(Replicate, RowOwnershipAndGroupingRecoverWords) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> lengths(1 + rng() % 12);
    for (auto& l : lengths) l = 1 + static_cast<int>(rng() % 7);
    const auto seq = sequence_with_spans(lengths);
    ContextFeatures words{FeatureLevel::kWord, nn::normal_matrix(static_cast<Eigen::Index>(lengths.size()), 5, 1.0, rng)};
    const auto out = replicate_to_phonemes(words, seq);
    ASSERT_EQ(static_cast<std::size_t>(out.rows()), seq.size());
    const auto owners = seq.phoneme_owners();
    for (std::size_t j = 0; j < owners.size(); ++j) {
      ASSERT_EQ(out.matrix.row(static_cast<Eigen::Index>(j)), words.matrix.row(owners[j]));
    }
    Eigen::Index start = 0;
    for (const auto& span : seq.word_spans) {
      for (int k = 0; k < span.length; ++k) ASSERT_EQ(out.matrix.row(start + k), words.matrix.row(span.word_index));
      start += span.length;
    }
  }
}

TEST(Fuse, ZeroProjectionIsIdentity) {
  std::mt19937_64 rng(4);
  const Matrix emb = nn::normal_matrix(5, 16, 1.0, rng);
  const ContextFeatures ctx{FeatureLevel::kPhoneme, nn::normal_matrix(5, 8, 1.0, rng)};
  const Matrix out = fuse(emb, ctx, Matrix::Zero(8, 16), RowVector::Zero(16));
  EXPECT_EQ(out.rows(), 5);
  EXPECT_EQ(out.cols(), 16);
  EXPECT_EQ(out, emb);

  nn::ParameterSet ps;
  ContextFusion fusion(ps, rng, "ctx", 8, 16);
  const ag::Var fused = fusion(ag::constant(emb), ag::constant(ctx.matrix));
  EXPECT_EQ(fused.value(), emb);
}

TEST(Fuse, AddsProjectedContext) {
  const Matrix emb = Matrix::Ones(2, 3);
  ContextFeatures ctx{FeatureLevel::kPhoneme, Matrix(2, 1)};
  ctx.matrix << 1, 2;
  Matrix w(1, 3);
  w << 1, 0, -1;
  Matrix expected(2, 3);
  expected << 2.5, 1.5, 0.5, 3.5, 1.5, -0.5;
  EXPECT_EQ(fuse(emb, ctx, w, RowVector::Constant(3, 0.5)), expected);
}

TEST(Fuse, LengthMismatch) {
  const ContextFeatures ctx{FeatureLevel::kPhoneme, Matrix::Zero(4, 8)};
  EXPECT_EQ(kind_of([&] { fuse(Matrix::Zero(5, 16), ctx, Matrix::Zero(8, 16), RowVector::Zero(16)); }),
            ErrorKind::kLengthMismatch);
  nn::ParameterSet ps;
  std::mt19937_64 rng(1);
  ContextFusion fusion(ps, rng, "ctx", 8, 16);
  EXPECT_EQ(kind_of([&] { fusion(ag::constant(Matrix::Zero(5, 16)), ag::constant(ctx.matrix)); }),
            ErrorKind::kLengthMismatch);
}

}  // namespace
}  // namespace polyvits
