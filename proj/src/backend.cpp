#include "spkmoco/backend.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double checked_norm(const Vector& v, const char* what) {
  const double n = v.norm();
  if (!(n > 0.0)) throw DataError(std::string(what) + ": zero vector");
  return n;
}

struct ClassStats {
  std::vector<int> classes;            // distinct labels in first-seen order
  std::vector<std::vector<int>> rows;  // row indices per class
};

ClassStats group_by_class(std::span<const int> labels, Eigen::Index n_rows) {
  if (static_cast<Eigen::Index>(labels.size()) != n_rows)
    throw DimensionError("label count does not match number of vectors");
  ClassStats cs;
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = index.try_emplace(labels[i], cs.classes.size());
    if (inserted) {
      cs.classes.push_back(labels[i]);
      cs.rows.emplace_back();
    }
    cs.rows[it->second].push_back(static_cast<int>(i));
  }
  return cs;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

double log_det_spd(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw DataError(std::string(what) + " is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix inverse_spd(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw DataError(std::string(what) + " is not positive definite");
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

bool is_positive_definite(const Matrix& m, double rel_floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return ev.minCoeff() > rel_floor * std::max(ev.maxCoeff(), 1e-300);
}

Matrix clamp_eigenvalues(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector ev = es.eigenvalues().cwiseMax(floor);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace

double cosine_score(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_score: dimension mismatch");
  return a.dot(b) / (checked_norm(a, "cosine_score") * checked_norm(b, "cosine_score"));
}

Vector length_normalize(const Vector& v) {
  return std::sqrt(static_cast<double>(v.size())) * v / checked_norm(v, "length_normalize");
}

Vector l2_normalize(const Vector& v) { return v / checked_norm(v, "l2_normalize"); }

Vector LdaTransform::apply(const Vector& v) const {
  if (v.size() != mean.size())
    throw DimensionError("LDA expects " + std::to_string(mean.size()) + "-dim input, got " +
                         std::to_string(v.size()));
  return projection * (v - mean);
}

LdaTransform train_lda(const Matrix& data, std::span<const int> labels, std::size_t out_dim,
                       std::vector<std::string>* warnings) {
  const ClassStats cs = group_by_class(labels, data.rows());
  const Eigen::Index dim = data.cols();
  if (cs.classes.size() < 2) throw DataError("LDA needs at least two classes");
  for (const auto& r : cs.rows)
    if (r.size() < 2) throw DataError("LDA needs at least two samples per class");
  if (out_dim == 0 || static_cast<Eigen::Index>(out_dim) > dim)
    throw ParameterError("LDA output dimension must lie in [1, input dimension]");

  const double n = static_cast<double>(data.rows());
  const Vector mean = data.colwise().mean().transpose();
  Matrix sw = Matrix::Zero(dim, dim), sb = Matrix::Zero(dim, dim);
  for (const auto& rows : cs.rows) {
    Vector mc = Vector::Zero(dim);
    for (int r : rows) mc += data.row(r).transpose();
    mc /= static_cast<double>(rows.size());
    for (int r : rows) {
      const Vector d = data.row(r).transpose() - mc;
      sw.noalias() += d * d.transpose();
    }
    const Vector dm = mc - mean;
    sb.noalias() += static_cast<double>(rows.size()) * dm * dm.transpose();
  }
  sw = symmetrize(sw / n);
  sb = symmetrize(sb / n);

  if (!is_positive_definite(sw, 1e-12)) {
    const double ridge = 1e-6 * sw.trace() / static_cast<double>(dim);
    sw += Matrix::Identity(dim, dim) * std::max(ridge, 1e-12);
    if (warnings) warnings->push_back("LDA: singular within-class scatter, added ridge");
  }

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(sb, sw);
  if (ges.info() != Eigen::Success) throw DataError("LDA eigen decomposition failed");
  LdaTransform t;
  t.mean = mean;
  t.projection.resize(static_cast<Eigen::Index>(out_dim), dim);
  t.eigenvalues.resize(static_cast<Eigen::Index>(out_dim));
  for (std::size_t k = 0; k < out_dim; ++k) {
    const Eigen::Index col = dim - 1 - static_cast<Eigen::Index>(k);
    Vector v = ges.eigenvectors().col(col);
    // Sign convention: largest-magnitude coordinate positive.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    t.projection.row(static_cast<Eigen::Index>(k)) = v.transpose();
    t.eigenvalues(static_cast<Eigen::Index>(k)) = ges.eigenvalues()(col);
  }
  t.degenerate = t.eigenvalues.cwiseAbs().maxCoeff() < 1e-10;
  if (t.degenerate && warnings)
    warnings->push_back("LDA: class means coincide, projection is arbitrary");
  return t;
}

void PldaModel::validate() const {
  const auto d = mu.size();
  if (d == 0 || phi_b.rows() != d || phi_b.cols() != d || phi_w.rows() != d || phi_w.cols() != d)
    throw DimensionError("PLDA model dimensions are inconsistent");
  if ((phi_b - phi_b.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
      (phi_w - phi_w.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw DataError("PLDA covariances must be symmetric");
  if (!is_positive_definite(phi_w, 0.0)) throw DataError("PLDA within-class covariance not PD");
}

double plda_log_likelihood(const PldaModel& model, const Matrix& data,
                           std::span<const int> labels) {
  const ClassStats cs = group_by_class(labels, data.rows());
  const auto d = static_cast<double>(model.dim());
  const Matrix b = inverse_spd(model.phi_b, "PLDA between-class covariance");
  const Matrix w = inverse_spd(model.phi_w, "PLDA within-class covariance");
  const double logdet_b = log_det_spd(model.phi_b, "Phi_b");
  const double logdet_w = log_det_spd(model.phi_w, "Phi_w");
  double total = 0.0;
  for (const auto& rows : cs.rows) {
    const double n = static_cast<double>(rows.size());
    Vector s = Vector::Zero(model.mu.size());
    double quad = 0.0;
    for (int r : rows) {
      const Vector x = data.row(r).transpose() - model.mu;
      s += x;
      quad += x.dot(w * x);
    }
    const Matrix l = b + n * w;
    Eigen::LLT<Matrix> llt(l);
    const Vector ws = w * s;
    const double logdet_l = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    total += -0.5 * n * d * kLog2Pi - 0.5 * logdet_b - 0.5 * n * logdet_w - 0.5 * logdet_l -
             0.5 * quad + 0.5 * ws.dot(llt.solve(ws));
  }
  return total;
}

PldaTraining train_plda(const Matrix& data, std::span<const int> labels, int n_iter,
                        std::vector<std::string>* warnings) {
  if (n_iter < 1) throw ParameterError("PLDA needs at least one EM iteration");
  const ClassStats cs = group_by_class(labels, data.rows());
  if (cs.classes.size() < 2) throw DataError("PLDA needs at least two classes");
  const Eigen::Index dim = data.cols();
  const double n_total = static_cast<double>(data.rows());
  const double n_spk = static_cast<double>(cs.classes.size());

  // Method-of-moments initialisation.
  PldaModel m;
  m.mu = data.colwise().mean().transpose();
  Matrix sw = Matrix::Zero(dim, dim), means_cov = Matrix::Zero(dim, dim);
  std::vector<Vector> sums;
  double inv_n_mean = 0.0;
  for (const auto& rows : cs.rows) {
    Vector s = Vector::Zero(dim);
    for (int r : rows) s += data.row(r).transpose();
    const Vector mc = s / static_cast<double>(rows.size());
    for (int r : rows) {
      const Vector dlt = data.row(r).transpose() - mc;
      sw.noalias() += dlt * dlt.transpose();
    }
    const Vector dm = mc - m.mu;
    means_cov.noalias() += dm * dm.transpose();
    inv_n_mean += 1.0 / static_cast<double>(rows.size());
    sums.push_back(s);
  }
  sw = symmetrize(sw / n_total);
  means_cov = symmetrize(means_cov / n_spk);
  inv_n_mean /= n_spk;

  bool regularize = false;
  const double ridge = 1e-6 * std::max(sw.trace(), 1e-12) / static_cast<double>(dim);
  if (data.rows() <= dim || !is_positive_definite(sw, 1e-12)) {
    regularize = true;
    if (warnings) warnings->push_back("PLDA: too few samples for the dimension, regularizing");
  }
  m.phi_w = regularize ? Matrix(sw + ridge * Matrix::Identity(dim, dim)) : sw;
  const double floor = 1e-3 * m.phi_w.trace() / static_cast<double>(dim);
  m.phi_b = clamp_eigenvalues(means_cov - inv_n_mean * m.phi_w, floor);

  PldaTraining out;
  out.log_likelihood.push_back(plda_log_likelihood(m, data, labels));

  for (int it = 0; it < n_iter; ++it) {
    const Matrix b = inverse_spd(m.phi_b, "PLDA between-class covariance");
    const Matrix w = inverse_spd(m.phi_w, "PLDA within-class covariance");
    const Vector b_mu = b * m.mu;
    // Posterior covariance depends only on the class size.
    std::map<std::size_t, Matrix> post_cov;
    Vector mu_acc = Vector::Zero(dim);
    std::vector<Vector> post_mean(cs.rows.size());
    for (std::size_t c = 0; c < cs.rows.size(); ++c) {
      const std::size_t nc = cs.rows[c].size();
      auto itc = post_cov.find(nc);
      if (itc == post_cov.end())
        itc = post_cov.emplace(nc, inverse_spd(b + static_cast<double>(nc) * w, "posterior precision"))
                  .first;
      post_mean[c] = itc->second * (b_mu + w * sums[c]);
      mu_acc += post_mean[c];
    }
    PldaModel next;
    next.mu = mu_acc / n_spk;
    Matrix phi_b = Matrix::Zero(dim, dim), phi_w = Matrix::Zero(dim, dim);
    for (std::size_t c = 0; c < cs.rows.size(); ++c) {
      const std::size_t nc = cs.rows[c].size();
      const Matrix& cov = post_cov.at(nc);
      const Vector dm = post_mean[c] - next.mu;
      phi_b += cov + dm * dm.transpose();
      for (int r : cs.rows[c]) {
        const Vector dx = data.row(r).transpose() - post_mean[c];
        phi_w.noalias() += dx * dx.transpose();
      }
      phi_w += static_cast<double>(nc) * cov;
    }
    next.phi_b = symmetrize(phi_b / n_spk);
    next.phi_w = symmetrize(phi_w / n_total);
    if (regularize) next.phi_w += ridge * Matrix::Identity(dim, dim);
    m = std::move(next);
    out.log_likelihood.push_back(plda_log_likelihood(m, data, labels));
  }
  out.model = std::move(m);
  return out;
}

PldaScorer::PldaScorer(PldaModel model) : model_(std::move(model)) {
  model_.validate();
  const Eigen::Index d = static_cast<Eigen::Index>(model_.dim());
  const Matrix total = model_.phi_b + model_.phi_w;
  Matrix same(2 * d, 2 * d), diff = Matrix::Zero(2 * d, 2 * d);
  same << total, model_.phi_b, model_.phi_b, total;
  diff.topLeftCorner(d, d) = total;
  diff.bottomRightCorner(d, d) = total;
  Eigen::LDLT<Matrix> same_ldlt(same), diff_ldlt(diff);
  if (same_ldlt.info() != Eigen::Success || diff_ldlt.info() != Eigen::Success)
    throw DataError("PLDA joint covariance factorization failed");
  const Matrix eye = Matrix::Identity(2 * d, 2 * d);
  Matrix q = diff_ldlt.solve(eye) - same_ldlt.solve(eye);
  // Exchange symmetry between enrollment and test blocks.
  Matrix swapped(2 * d, 2 * d);
  swapped << q.bottomRightCorner(d, d), q.bottomLeftCorner(d, d), q.topRightCorner(d, d),
      q.topLeftCorner(d, d);
  quad_ = symmetrize(0.5 * (q + swapped));
  offset_ = 0.5 * (diff_ldlt.vectorD().array().log().sum() -
                   same_ldlt.vectorD().array().log().sum());
}

double PldaScorer::llr(const Vector& enroll, const Vector& test) const {
  const Eigen::Index d = static_cast<Eigen::Index>(model_.dim());
  if (enroll.size() != d || test.size() != d)
    throw DimensionError("PLDA expects " + std::to_string(d) + "-dim vectors");
  Vector z(2 * d);
  z << enroll - model_.mu, test - model_.mu;
  return 0.5 * z.dot(quad_ * z) + offset_;
}

double plda_llr(const PldaModel& model, const Vector& enroll, const Vector& test) {
  return PldaScorer(model).llr(enroll, test);
}

Vector enroll_average(std::span<const Vector> embeddings, EnrollNorm norm) {
  if (embeddings.empty()) throw DataError("enrollment set is empty");
  Vector mean = Vector::Zero(embeddings.front().size());
  for (const auto& e : embeddings) {
    if (e.size() != mean.size()) throw DimensionError("enrollment vectors differ in dimension");
    mean += e;
  }
  mean /= static_cast<double>(embeddings.size());
  double scale = 0.0;
  for (const auto& e : embeddings) scale = std::max(scale, e.norm());
  if (mean.norm() <= 1e-12 * std::max(scale, 1.0))
    throw DataError("enrollment mean is zero; direction undefined");
  return norm == EnrollNorm::l2 ? l2_normalize(mean) : length_normalize(mean);
}

}  // namespace spkmoco
