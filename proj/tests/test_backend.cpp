#include <gtest/gtest.h>

#include <cmath>

#include "spkmoco/backend.hpp"
#include "spkmoco/errors.hpp"
#include "spkmoco/rng.hpp"

using namespace spkmoco;

namespace {

Vector randn(Eigen::Index d, Rng& rng, double sd = 1.0) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal(0.0, sd);
  return v;
}

Matrix random_spd(Eigen::Index d, Rng& rng, double scale) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return scale * (a * a.transpose() / double(d) + 0.5 * Matrix::Identity(d, d));
}

Matrix random_rotation(Eigen::Index d, Rng& rng) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ();
}

struct Labelled {
  Matrix x;
  std::vector<int> y;
};

// Two-covariance generative model: x = mu + y_s + e, y_s ~ N(0, B), e ~ N(0, W).
Labelled sample_plda(const Vector& mu, const Matrix& b, const Matrix& w, int speakers, int per, Rng& rng) {
  const Eigen::Index d = mu.size();
  Matrix lb = Matrix::Zero(d, d);
  if (b.norm() > 0) lb = Eigen::LLT<Matrix>(b).matrixL();
  const Matrix lw = Eigen::LLT<Matrix>(w).matrixL();
  Labelled out;
  out.x.resize(speakers * per, d);
  for (int s = 0; s < speakers; ++s) {
    const Vector ys = lb * randn(d, rng);
    for (int i = 0; i < per; ++i) {
      out.x.row(s * per + i) = (mu + ys + lw * randn(d, rng)).transpose();
      out.y.push_back(s);
    }
  }
  return out;
}

double rel_frobenius(const Matrix& est, const Matrix& truth) { return (est - truth).norm() / truth.norm(); }

double log_normal_1d(double x, double var) { return -0.5 * std::log(2 * M_PI * var) - 0.5 * x * x / var; }

}  // namespace

TEST(Cosine, Examples) {
  Vector a(2), b(2), c(2);
  a << 1, 0;
  b << 1, 1;
  c << 0, 3;
  EXPECT_NEAR(cosine_score(a, a), 1.0, 1e-15);
  EXPECT_EQ(cosine_score(a, c), 0.0);
  EXPECT_NEAR(cosine_score(a, b), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(cosine_score(a, Vector::Zero(2)), DataError);
}

TEST(Cosine, PositiveScalingInvariance) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vector a = randn(8, rng), b = randn(8, rng);
    const double k = rng.uniform(1e-3, 1e3);
    EXPECT_NEAR(cosine_score(a, b), cosine_score(k * a, b), 1e-12);
    EXPECT_NEAR(cosine_score(a, b), cosine_score(a, k * b), 1e-12);
  }
}

TEST(LengthNorm, Examples) {
  Vector v(4);
  v << 2, 0, 0, 0;
  EXPECT_EQ(length_normalize(v), v);
  Rng rng(2);
  const Vector r = randn(7, rng);
  const Vector n = length_normalize(r);
  EXPECT_NEAR(n.norm(), std::sqrt(7.0), 1e-14);
  EXPECT_LT((length_normalize(n) - n).norm(), 1e-14);
  EXPECT_THROW(length_normalize(Vector::Zero(3)), DataError);
}

TEST(Lda, SeparatingAxisMatchesFisherOracle) {
  Rng rng(3);
  const int n = 4000;
  Matrix x(n, 3);
  std::vector<int> y;
  Vector axis(3);
  axis << 1, 2, -0.5;
  axis.normalize();
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    x.row(i) = (randn(3, rng) + (c ? 3.0 : -3.0) * axis).transpose();
    y.push_back(c);
  }
  const auto t = train_lda(x, y, 1);
  // Two-class oracle: Fisher direction S_w^{-1}(m1 - m0).
  Vector m[2] = {Vector::Zero(3), Vector::Zero(3)};
  for (int i = 0; i < n; ++i) m[y[i]] += x.row(i).transpose() / (n / 2.0);
  Matrix sw = Matrix::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const Vector d = x.row(i).transpose() - m[y[i]];
    sw += d * d.transpose();
  }
  const Vector fisher = sw.ldlt().solve(m[1] - m[0]);
  const Vector p = t.projection.row(0).transpose();
  const double angle = std::acos(std::min(1.0, std::abs(p.dot(fisher)) / (p.norm() * fisher.norm())));
  EXPECT_LT(angle * 180 / M_PI, 1e-6);
  const double angle_truth = std::acos(std::min(1.0, std::abs(p.normalized().dot(axis))));
  EXPECT_LT(angle_truth * 180 / M_PI, 1.0);
  EXPECT_FALSE(t.degenerate);
}

TEST(Lda, IdenticalClassMeansAreFlagged) {
  Rng rng(4);
  Matrix x(100, 3);
  std::vector<int> y;
  for (int i = 0; i < 50; ++i) {
    const Vector v = randn(3, rng);
    x.row(2 * i) = v.transpose();
    x.row(2 * i + 1) = -v.transpose();
  }
  for (int i = 0; i < 100; ++i) y.push_back(i < 50 ? 0 : 1);
  // Class 0 and 1 each take 25 +v/-v pairs: both means are exactly zero.
  std::vector<std::string> warnings;
  const auto t = train_lda(x, y, 2, &warnings);
  EXPECT_TRUE(t.degenerate);
  EXPECT_LT(t.eigenvalues.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_FALSE(warnings.empty());
}

TEST(Lda, RotationEquivariantScores) {
  Rng rng(5);
  const int classes = 6, per = 30;
  Matrix x(classes * per, 5);
  std::vector<int> y;
  std::vector<Vector> means;
  for (int c = 0; c < classes; ++c) means.push_back(randn(5, rng, 3.0));
  for (int i = 0; i < classes * per; ++i) {
    x.row(i) = (means[i / per] + randn(5, rng)).transpose();
    y.push_back(i / per);
  }
  const Matrix q = random_rotation(5, rng);
  const Matrix xr = x * q.transpose();
  const auto a = train_lda(x, y, 3), b = train_lda(xr, y, 3);
  for (int i = 0; i < 20; ++i) {
    const Vector u = randn(5, rng, 2.0), v = randn(5, rng, 2.0);
    EXPECT_NEAR(cosine_score(a.apply(u), a.apply(v)), cosine_score(b.apply(q * u), b.apply(q * v)), 1e-8);
  }
}

TEST(Lda, ProjectedWithinScatterIsIdentity) {
  Rng rng(6);
  const int classes = 8, per = 25;
  Matrix x(classes * per, 6);
  std::vector<int> y;
  const Matrix mix = random_spd(6, rng, 1.0);
  for (int i = 0; i < classes * per; ++i) {
    if (i % per == 0) y.reserve(y.size());
    x.row(i) = (mix * randn(6, rng) + Vector::Constant(6, double(i / per))).transpose();
    y.push_back(i / per);
  }
  const auto t = train_lda(x, y, 4);
  Matrix sw = Matrix::Zero(4, 4);
  for (int c = 0; c < classes; ++c) {
    Vector m = Vector::Zero(4);
    for (int i = 0; i < per; ++i) m += t.apply(x.row(c * per + i).transpose()) / per;
    for (int i = 0; i < per; ++i) {
      const Vector d = t.apply(x.row(c * per + i).transpose()) - m;
      sw += d * d.transpose();
    }
  }
  sw /= double(classes * per);
  EXPECT_LT((sw - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-6);
  for (Eigen::Index k = 1; k < 4; ++k) EXPECT_GE(t.eigenvalues(k - 1), t.eigenvalues(k));
}

TEST(Lda, SingularWithinScatterRegularized) {
  Rng rng(7);
  Matrix x(60, 3);
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    x.row(i) << rng.normal() + (i % 3), rng.normal(), 5.0;
    y.push_back(i % 3);
  }
  std::vector<std::string> warnings;
  const auto t = train_lda(x, y, 2, &warnings);
  EXPECT_FALSE(warnings.empty());
  EXPECT_TRUE(t.projection.allFinite());
}

TEST(Lda, ErrorPaths) {
  Matrix x = Matrix::Random(6, 3);
  EXPECT_THROW(train_lda(x, std::vector<int>(6, 0), 1), DataError);
  EXPECT_THROW(train_lda(x, std::vector<int>{0, 0, 1, 1, 2, 2}, 4), ParameterError);
  EXPECT_THROW(train_lda(x, std::vector<int>{0, 0, 1, 1, 1, 2}, 1), DataError);
  EXPECT_THROW(train_lda(x, std::vector<int>{0, 1}, 1), DimensionError);
}

TEST(Plda, RecoversGenerativeCovariances) {
  // Decaying between-speaker spectrum in a random basis.
  Rng basis(5);
  const Matrix q = random_rotation(5, basis);
  Vector eb(5), ew(5);
  eb << 4, 1, 0.5, 0.25, 0.1;
  ew << 1.5, 1, 1, 0.7, 0.5;
  const Matrix b = q * eb.asDiagonal() * q.transpose();
  const Matrix w = ew.asDiagonal();
  Rng rng(2024);
  const auto data = sample_plda(Vector::Constant(5, 0.5), b, w, 200, 20, rng);
  const auto fit = train_plda(data.x, data.y, 10);
  EXPECT_LT(rel_frobenius(fit.model.phi_b, b), 0.15);
  EXPECT_LT(rel_frobenius(fit.model.phi_w, w), 0.15);
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
    EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-8 * std::abs(fit.log_likelihood[i - 1]));
  EXPECT_NO_THROW(fit.model.validate());
}

TEST(Plda, NoSpeakerEffectGivesSmallBetween) {
  Rng rng(9);
  const Matrix w = random_spd(5, rng, 1.0);
  const auto data = sample_plda(Vector::Zero(5), Matrix::Zero(5, 5), w, 200, 20, rng);
  const auto fit = train_plda(data.x, data.y, 10);
  EXPECT_LE(fit.model.phi_b.trace(), 0.05 * fit.model.phi_w.trace());
}

TEST(Plda, EmMonotoneAcrossSeeds) {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Eigen::Index d = 2 + seed % 4;
    const auto data = sample_plda(randn(d, rng), random_spd(d, rng, 1.5), random_spd(d, rng, 1.0),
                                  10 + 3 * seed, 2 + seed % 5, rng);
    const auto fit = train_plda(data.x, data.y, 15);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
      ASSERT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-8 * std::abs(fit.log_likelihood[i - 1]))
          << "seed " << seed << " iter " << i;
  }
}

TEST(Plda, LogLikelihoodMatchesJointGaussian) {
  // One speaker, two samples: the pair is jointly Gaussian with covariance
  // [[B+W, B], [B, B+W]].
  Rng rng(10);
  PldaModel m{randn(3, rng), random_spd(3, rng, 1.0), random_spd(3, rng, 0.7)};
  Matrix x(2, 3);
  x.row(0) = randn(3, rng).transpose();
  x.row(1) = randn(3, rng).transpose();
  Matrix cov(6, 6);
  cov << m.phi_b + m.phi_w, m.phi_b, m.phi_b, m.phi_b + m.phi_w;
  Vector z(6);
  z << x.row(0).transpose() - m.mu, x.row(1).transpose() - m.mu;
  Eigen::LLT<Matrix> llt(cov);
  const double logdet = 2 * llt.matrixLLT().diagonal().array().log().sum();
  const double expect = -3 * std::log(2 * M_PI) - 0.5 * logdet - 0.5 * z.dot(llt.solve(z));
  EXPECT_NEAR(plda_log_likelihood(m, x, std::vector<int>{4, 4}), expect, 1e-10);
}

TEST(Plda, ErrorsAndWarnings) {
  Rng rng(11);
  Matrix x = Matrix::Random(8, 3);
  std::vector<int> y{0, 0, 1, 1, 2, 2, 3, 3};
  EXPECT_THROW(train_plda(x, y, 0), ParameterError);
  EXPECT_THROW(train_plda(x, std::vector<int>(8, 1), 3), DataError);
  Matrix wide = Matrix::Random(4, 6);
  std::vector<std::string> warnings;
  const auto fit = train_plda(wide, std::vector<int>{0, 0, 1, 1}, 3, &warnings);
  EXPECT_FALSE(warnings.empty());
  EXPECT_TRUE(fit.model.phi_w.allFinite());
}

TEST(PldaLlr, ZeroBetweenGivesZero) {
  Rng rng(12);
  PldaModel m{randn(4, rng), Matrix::Zero(4, 4), random_spd(4, rng, 1.0)};
  for (int i = 0; i < 10; ++i) EXPECT_EQ(plda_llr(m, randn(4, rng), randn(4, rng)), 0.0);
}

TEST(PldaLlr, QuadratureOracle1d) {
  PldaModel m{Vector::Zero(1), Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)};
  const double e = 1, t = 1;
  // p(e,t|same) = ∫ N(e; y, 1) N(t; y, 1) N(y; 0, 1) dy by composite Simpson.
  const int n = 20000;
  const double lo = -12, hi = 12, h = (hi - lo) / n;
  double acc = 0;
  for (int i = 0; i <= n; ++i) {
    const double y = lo + i * h;
    const double f = std::exp(log_normal_1d(e - y, 1) + log_normal_1d(t - y, 1) + log_normal_1d(y, 1));
    acc += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
  }
  const double same = std::log(acc * h / 3);
  const double diff = log_normal_1d(e, 2) + log_normal_1d(t, 2);
  Vector ev(1), tv(1);
  ev << e;
  tv << t;
  EXPECT_NEAR(plda_llr(m, ev, tv), same - diff, 1e-6);
}

TEST(PldaLlr, SymmetricAndRotationInvariant) {
  Rng rng(13);
  PldaModel m{randn(5, rng), random_spd(5, rng, 2.0), random_spd(5, rng, 1.0)};
  const PldaScorer scorer(m);
  const Matrix q = random_rotation(5, rng);
  PldaModel r{q * m.mu, q * m.phi_b * q.transpose(), q * m.phi_w * q.transpose()};
  r.phi_b = 0.5 * (r.phi_b + r.phi_b.transpose());
  r.phi_w = 0.5 * (r.phi_w + r.phi_w.transpose());
  const PldaScorer rotated(r);
  for (int i = 0; i < 20; ++i) {
    const Vector a = randn(5, rng, 2), b = randn(5, rng, 2);
    EXPECT_NEAR(scorer.llr(a, b), scorer.llr(b, a), 1e-10);
    EXPECT_NEAR(scorer.llr(a, b), rotated.llr(q * a, q * b), 1e-8);
  }
  EXPECT_THROW(scorer.llr(Vector::Zero(4), Vector::Zero(5)), DimensionError);
}

TEST(Enroll, Examples) {
  Rng rng(14);
  const Vector v = randn(6, rng);
  const std::vector<Vector> one{v};
  EXPECT_LT((enroll_average(one, EnrollNorm::l2) - v.normalized()).norm(), 1e-15);
  EXPECT_LT((enroll_average(one, EnrollNorm::length) - length_normalize(v)).norm(), 1e-14);
  const std::vector<Vector> opposite{v, -v};
  EXPECT_THROW(enroll_average(opposite, EnrollNorm::l2), DataError);
  EXPECT_THROW(enroll_average(std::vector<Vector>{}, EnrollNorm::l2), DataError);
  std::vector<Vector> three;
  for (int i = 0; i < 3; ++i) three.push_back(randn(6, rng).normalized());
  Vector oracle = Vector::Zero(6);
  for (int k = 0; k < 6; ++k) oracle(k) = (three[0](k) + three[1](k) + three[2](k)) / 3;
  EXPECT_LT((enroll_average(three, EnrollNorm::l2) - oracle / oracle.norm()).norm(), 1e-12);
}
