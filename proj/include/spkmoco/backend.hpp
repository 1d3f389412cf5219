#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

namespace spkmoco {

// Dense double matrices for the scoring backends; embeddings are rows.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

double cosine_score(const Vector& a, const Vector& b);
// sqrt(dim) * v / ||v||.
Vector length_normalize(const Vector& v);
Vector l2_normalize(const Vector& v);

struct LdaTransform {
  Matrix projection;    // out_dim × in_dim, rows by decreasing eigenvalue
  Vector mean;          // training-population mean, subtracted first
  Vector eigenvalues;   // between/within ratios of the kept directions
  bool degenerate = false;  // all kept eigenvalues ~ 0 (no class separation)

  std::size_t in_dim() const { return static_cast<std::size_t>(projection.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(projection.rows()); }
  Vector apply(const Vector& v) const;
};

// Solves S_b v = lambda S_w v with Vᵀ S_w V = I (within-class whitening).
// A singular within-class scatter gets a ridge of 1e-6*trace/dim and a
// warning appended to `warnings`.
LdaTransform train_lda(const Matrix& data, std::span<const int> labels, std::size_t out_dim,
                       std::vector<std::string>* warnings = nullptr);

// Two-covariance model: x = y + e, y ~ N(mu, Phi_b), e ~ N(0, Phi_w).
struct PldaModel {
  Vector mu;
  Matrix phi_b;
  Matrix phi_w;

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
  void validate() const;
};

struct PldaTraining {
  PldaModel model;
  // Total log-likelihood of the training data: initial model, then after
  // every EM iteration.
  std::vector<double> log_likelihood;
};

PldaTraining train_plda(const Matrix& data, std::span<const int> labels, int n_iter,
                        std::vector<std::string>* warnings = nullptr);

// Marginal log-likelihood of labelled data under the model.
double plda_log_likelihood(const PldaModel& model, const Matrix& data, std::span<const int> labels);

// Precomputed closed-form same-vs-different log-likelihood ratio.
class PldaScorer {
 public:
  explicit PldaScorer(PldaModel model);
  double llr(const Vector& enroll, const Vector& test) const;
  const PldaModel& model() const { return model_; }

 private:
  PldaModel model_;
  Matrix quad_;  // Σ_diff⁻¹ − Σ_same⁻¹ over the stacked (enroll, test) vector
  double offset_ = 0.0;
};

double plda_llr(const PldaModel& model, const Vector& enroll, const Vector& test);

enum class EnrollNorm { l2, length };

// Arithmetic mean followed by re-normalization; DataError for an empty set
// or a (near) zero mean.
Vector enroll_average(std::span<const Vector> embeddings, EnrollNorm norm);

}  // namespace spkmoco
