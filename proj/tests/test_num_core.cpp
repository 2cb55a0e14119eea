#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "flowuq/num_core.hpp"

using namespace flowuq;

namespace {

// Largest singular value via one-sided Jacobi rotations (Hestenes).
double jacobi_max_singular_value(Matrix a) {
  const std::size_t m = a.rows(), n = a.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (std::abs(gamma) < 1e-300) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        const double c = 1 / std::sqrt(1 + t * t), s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = a(i, p), y = a(i, q);
          a(i, p) = c * x - s * y;
          a(i, q) = s * x + c * y;
        }
      }
    if (off < 1e-15) break;
  }
  double best = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

std::vector<long double> softmax_ld(const std::vector<long double>& l) {
  long double z = 0;
  for (auto v : l) z += std::exp(v);
  std::vector<long double> p;
  for (auto v : l) p.push_back(std::exp(v) / z);
  return p;
}

}  // namespace

TEST(Softmax, UniformForEqualLogits) {
  auto p = softmax(std::vector<double>{0, 0, 0, 0});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ConstantPairIsHalfForAnyTemperature) {
  for (double c : {-1e4, -3.0, 0.0, 7.5, 1e4})
    for (double t : {0.1, 1.0, 10.0}) {
      auto p = softmax(std::vector<double>{c, c}, t);
      EXPECT_DOUBLE_EQ(p[0], 0.5);
      EXPECT_DOUBLE_EQ(p[1], 0.5);
    }
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
  auto p = softmax(std::vector<double>{2.0, 1.0, 0.0});
  auto ref = softmax_ld({2.0L, 1.0L, 0.0L});
  const double expected[] = {0.66524, 0.24473, 0.09003};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(p[i], static_cast<double>(ref[i]), 1e-12);
    EXPECT_NEAR(p[i], expected[i], 1e-5);
  }
}

TEST(Softmax, NoOverflowForLargeLogits) {
  auto p = softmax(std::vector<double>{1e4, -1e4, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_NO_THROW(check_prob_vector(p));
}

TEST(Softmax, RejectsNonFiniteAndBadTemperature) {
  EXPECT_THROW(softmax(std::vector<double>{0.0, NAN}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{0.0, INFINITY}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{0.0, 1.0}, 0.0), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{}), InvalidInput);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(1 + rng.index(10));
    for (double& v : l) v = rng.uniform(-20, 20);
    const double c = rng.uniform(-50, 50);
    auto shifted = l;
    for (double& v : shifted) v += c;
    auto a = softmax(l), b = softmax(shifted);
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Softmax, EntropyNonDecreasingInTemperature) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(2 + rng.index(8));
    for (double& v : l) v = rng.uniform(-5, 5);
    double prev = -1;
    for (double t = 0.05; t < 50; t *= 1.3) {
      const double h = entropy(softmax(l, t));
      EXPECT_GE(h, prev - 1e-12);
      prev = h;
    }
  }
}

TEST(LogSumExp, Examples) {
  EXPECT_NEAR(log_sum_exp(std::vector<double>{0, 0}), std::log(2.0), 1e-15);
  for (double x : {-3.0, 0.0, 42.0})
    for (double t : {0.5, 1.0, 4.0}) EXPECT_NEAR(log_sum_exp(std::vector<double>{x}, t), x, 1e-12);
  const long double ref = std::log(std::exp(2.0L) + std::exp(1.0L) + 1.0L);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{2, 1, 0}), static_cast<double>(ref), 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{2, 1, 0}), 2.407606, 1e-5);
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), InvalidInput);
}

TEST(LogSumExp, Bounds) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(1 + rng.index(12));
    for (double& v : l) v = rng.uniform(-30, 30);
    const double t = rng.uniform(0.1, 5);
    const double m = *std::max_element(l.begin(), l.end());
    const double v = log_sum_exp(l, t);
    EXPECT_GE(v, m - 1e-12);
    EXPECT_LE(v, m + t * std::log(static_cast<double>(l.size())) + 1e-12);
  }
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(std::vector<double>{1, 0, 0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>(10, 0.1)), std::log(10.0), 1e-12);
  EXPECT_NEAR(entropy(std::vector<double>{0.9, 0.1}), -(0.9 * std::log(0.9) + 0.1 * std::log(0.1)), 1e-15);
  EXPECT_NEAR(entropy(std::vector<double>{0.9, 0.1}), 0.325083, 1e-6);
}

TEST(Entropy, RangeOnRandomDistributions) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> l(1 + rng.index(10));
    for (double& v : l) v = rng.uniform(-10, 10);
    auto p = softmax(l);
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(p.size())) + 1e-12);
  }
}

TEST(Entropy, RejectsInvalidProbabilities) {
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.6}), InvalidInput);
  EXPECT_THROW(entropy(std::vector<double>{1.2, -0.2}), InvalidInput);
}

TEST(Argmax, LowestIndexWinsTies) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{1, 1, 1}), 0u);
}

TEST(SpectralNorm, DiagonalAndIdentity) {
  Matrix d(2, 2, {3, 0, 0, 1});
  EXPECT_NEAR(spectral_norm(d), 3.0, 3e-3);
  for (std::size_t n : {1u, 2u, 5u, 16u}) EXPECT_NEAR(spectral_norm(Matrix::identity(n)), 1.0, 1e-12);
  EXPECT_EQ(spectral_norm(Matrix(3, 4)), 0.0);
}

TEST(SpectralNorm, MatchesJacobiSvdOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    // Gaussian noise plus a dominant rank-one term keeps sigma1/sigma2 well apart
    Matrix m(8, 8);
    std::vector<double> u(8), w(8);
    for (double& v : u) v = rng.normal();
    for (double& v : w) v = rng.normal();
    const double nu = norm2(u), nw = norm2(w);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) m(i, j) = rng.normal() / std::sqrt(8.0) + 5.0 * u[i] * w[j] / (nu * nw);
    const double oracle = jacobi_max_singular_value(m);
    EXPECT_NEAR(spectral_norm(m, 30) / oracle, 1.0, 1e-3) << "seed " << seed;
  }
}

TEST(SpectralNorm, RectangularAgainstOracle) {
  Rng rng(77);
  Matrix m(5, 12);
  for (double& v : m.data()) v = rng.uniform(-1, 1);
  EXPECT_NEAR(spectral_norm(m, 200) / jacobi_max_singular_value(m), 1.0, 1e-6);
}

TEST(LinearAlgebra, MatmulVariantsAgree) {
  Rng rng(8);
  Matrix a(4, 3), b(3, 5), c(4, 5);
  for (double& v : a.data()) v = rng.normal();
  for (double& v : b.data()) v = rng.normal();
  for (double& v : c.data()) v = rng.normal();
  Matrix ab = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(ab(i, j), s, 1e-12);
    }
  EXPECT_EQ(matmul_tn(a, c), matmul(transpose(a), c));
  EXPECT_EQ(matmul_nt(c, b), matmul(c, transpose(b)));
  EXPECT_THROW(matmul(a, a), DimensionMismatch);
}

TEST(LinearAlgebra, CholeskyReconstructs) {
  Rng rng(9);
  Matrix g(6, 6);
  for (double& v : g.data()) v = rng.normal();
  Matrix s = matmul_tn(g, g);
  for (std::size_t i = 0; i < 6; ++i) s(i, i) += 0.1;
  auto l = cholesky(s);
  ASSERT_TRUE(l.has_value());
  Matrix back = matmul_nt(*l, *l);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(back.data()[i], s.data()[i], 1e-10);
  Matrix bad(2, 2, {1, 2, 2, 1});
  EXPECT_FALSE(cholesky(bad).has_value());
}

TEST(Rng, DeterministicAndSplittable) {
  Rng a(123), b(123);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.normal(), b.normal());
  Rng c(123);
  c.uniform();
  // split depends on the seed only, never on how much was consumed
  EXPECT_EQ(Rng(123).split(4).uniform(), c.split(4).uniform());
  EXPECT_NE(Rng(123).split(4).uniform(), Rng(123).split(5).uniform());
}

TEST(Rng, StateRoundTrip) {
  Rng a(55);
  a.normal();
  const auto s = a.state();
  const double next = a.uniform();
  Rng b(0);
  b.restore(s);
  EXPECT_EQ(b.uniform(), next);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng rng(1);
  auto idx = rng.sample_without_replacement(100, 40);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
  EXPECT_LT(idx.back(), 100u);
}
