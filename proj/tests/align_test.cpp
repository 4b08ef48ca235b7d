#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "polyvits/align/batch.hpp"
#include "polyvits/align/mas.hpp"

namespace polyvits {
namespace {

Matrix random_loglik(int P, int F, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(-3.0, 2.0);
  Matrix m(P, F);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

TEST(Mas, SinglePhonemeTakesAllFrames) {
  const Matrix m = Matrix::Constant(1, 3, -1.0);
  const auto path = mas(m);
  EXPECT_EQ(path.assignment, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(path.durations, (std::vector<int>{3}));
}

TEST(Mas, DiagonalSquare) {
  Matrix m(2, 2);
  m << 0, -9, -9, 0;
  EXPECT_EQ(mas(m).assignment, (std::vector<int>{0, 1}));
}

TEST(Mas, InfeasibleWhenFewerFramesThanPhonemes) {
  const Matrix m = Matrix::Zero(3, 2);
  EXPECT_THROW(mas(m), Error);
  try {
    mas(m);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInfeasible);
  }
}

TEST(Mas, MatchesBruteForceOnRandom4x7) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix m = random_loglik(4, 7, rng);
    const auto fast = mas(m);
    const auto oracle = brute_force_align(m);
    ASSERT_EQ(fast.assignment, oracle.assignment) << "seed " << seed;
    ASSERT_EQ(path_score(m, fast.assignment), path_score(m, oracle.assignment));
  }
}

TEST(Mas, MatchesBruteForceOnAllSmallShapes) {
  std::mt19937_64 rng(1234);
  int instances = 0;
  for (int P = 1; P <= 5; ++P) {
    for (int F = P; F <= 8; ++F) {
      for (int k = 0; k < 6; ++k, ++instances) {
        const Matrix m = random_loglik(P, F, rng);
        const auto fast = mas(m);
        EXPECT_NO_THROW(check_path(fast, P, F));
        EXPECT_EQ(fast, brute_force_align(m));
      }
    }
  }
  EXPECT_GE(instances, 100);
}

TEST(Mas, TieRuleMatchesOracleOnIntegerMatrices) {
  // Entries in {-1, 0} create many exactly tied paths.
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int P = 1 + static_cast<int>(rng() % 5);
    const int F = P + static_cast<int>(rng() % 5);
    Matrix m(P, F);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (rng() % 2 == 0) ? 0.0 : -1.0;
    ASSERT_EQ(mas(m), brute_force_align(m)) << "trial " << trial;
  }
}

TEST(Mas, ConstantMatrixKeepsLastPhonemeLongest) {
  // All paths tie; the backtrace stays on the current phoneme while it can.
  const Matrix m = Matrix::Zero(3, 6);
  EXPECT_EQ(mas(m).assignment, (std::vector<int>{0, 1, 2, 2, 2, 2}));
}

TEST(Mas, ShiftInvariance) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int P = 1 + static_cast<int>(rng() % 6);
    const int F = P + static_cast<int>(rng() % 10);
    const Matrix m = random_loglik(P, F, rng);
    const double c = static_cast<double>(static_cast<int>(rng() % 21) - 10);
    const Matrix shifted = m.array() + c;
    const auto a = mas(m);
    const auto b = mas(shifted);
    EXPECT_EQ(a.assignment, b.assignment);
    EXPECT_NEAR(path_score(shifted, b.assignment), path_score(m, a.assignment) + c * F, 1e-9);
  }
}

TEST(Mas, IgnoresEntriesOutsideValidRegion) {
  std::mt19937_64 rng(17);
  const Matrix m = random_loglik(4, 9, rng);
  Matrix padded = Matrix::Constant(7, 15, std::numeric_limits<double>::quiet_NaN());
  padded.topLeftCorner(4, 9) = m;
  EXPECT_EQ(mas(padded, 4, 9), mas(m));
}

TEST(Mas, Deterministic) {
  std::mt19937_64 rng(3);
  const Matrix m = random_loglik(12, 40, rng);
  EXPECT_EQ(mas(m), mas(m));
}

TEST(Mas, RejectsNonFiniteValidEntries) {
  Matrix m = Matrix::Zero(2, 3);
  m(1, 1) = std::numeric_limits<double>::infinity();
  try {
    mas(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
  }
}

TEST(BruteForce, EnumeratesBinomialPathCounts) {
  long count = 0;
  brute_force_align(Matrix::Zero(2, 3), &count);
  EXPECT_EQ(count, 2);
  brute_force_align(Matrix::Zero(1, 9), &count);
  EXPECT_EQ(count, 1);
  brute_force_align(Matrix::Zero(4, 9), &count);
  EXPECT_EQ(count, 56);  // C(8, 3)
}

TEST(BruteForce, SizeLimit) {
  try {
    brute_force_align(Matrix::Zero(2, 13));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSizeLimit);
  }
  EXPECT_THROW(brute_force_align(Matrix::Zero(9, 10)), Error);
}

TEST(MasBatch, BatchOfOneEqualsReference) {
  std::mt19937_64 rng(8);
  const Matrix m = random_loglik(5, 11, rng);
  const auto batch = BatchedLoglik::from_items({m}, {5}, {11});
  const auto paths = mas_batch(batch, nullptr);
  ASSERT_EQ(paths.size(), 1u);
  EXPECT_EQ(paths[0], mas(m));
}

TEST(MasBatch, PaddedItemsMatchSlicedReference) {
  std::mt19937_64 rng(21);
  std::vector<Matrix> items;
  std::vector<int> vp, vf;
  for (int b = 0; b < 32; ++b) {
    const int P = 1 + static_cast<int>(rng() % 10);
    const int F = P + static_cast<int>(rng() % 20);
    items.push_back(random_loglik(P, F, rng));
    vp.push_back(P);
    vf.push_back(F);
  }
  const auto batch = BatchedLoglik::from_items(items, vp, vf);
  const auto paths = mas_batch(batch, nullptr);
  for (std::size_t b = 0; b < items.size(); ++b) EXPECT_EQ(paths[b], mas(items[b]));
}

TEST(MasBatch, InfeasibleItemIsNamed) {
  const auto batch = BatchedLoglik::from_items({Matrix::Zero(2, 4), Matrix::Zero(3, 4)}, {2, 3}, {4, 2});
  try {
    mas_batch(batch, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInfeasible);
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos);
  }
}

TEST(MasBatch, LayoutErrors) {
  auto batch = BatchedLoglik::from_items({Matrix::Zero(2, 4)}, {2}, {4});
  batch.data.pop_back();
  try {
    mas_batch(batch, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLayout);
  }
}

#ifdef POLYVITS_TEST_KERNEL_PATH
TEST(MasKernel, PluginThroughCAbiMatchesReference) {
  const auto kernel = MasKernel::load(POLYVITS_TEST_KERNEL_PATH);
  ASSERT_NE(kernel, nullptr);
  std::mt19937_64 rng(77);
  std::vector<Matrix> items;
  std::vector<int> vp, vf;
  for (int b = 0; b < 16; ++b) {
    const int P = 1 + static_cast<int>(rng() % 8);
    const int F = P + static_cast<int>(rng() % 16);
    items.push_back(random_loglik(P, F, rng));
    vp.push_back(P);
    vf.push_back(F);
  }
  const auto batch = BatchedLoglik::from_items(items, vp, vf);
  EXPECT_EQ(kernel->run(batch), mas_batch_reference(batch));

  const auto bad = BatchedLoglik::from_items({Matrix::Zero(2, 4), Matrix::Zero(3, 4)}, {2, 3}, {4, 2});
  try {
    kernel->run(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInfeasible);
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos);
  }
}
#endif

TEST(MasKernel, MissingLibraryFallsBackToReference) {
  EXPECT_EQ(MasKernel::load("/nonexistent/libnothing.so"), nullptr);
}

}  // namespace
}  // namespace polyvits
