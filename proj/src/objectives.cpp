#include "spkmoco/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("logits must be a matrix");
  if (labels.size() != logits.rows())
    throw DimensionError("label count " + std::to_string(labels.size()) + " != batch size " +
                         std::to_string(logits.rows()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw ParameterError("label " + std::to_string(y) + " outside [0, " +
                           std::to_string(logits.cols()) + ")");
}

}  // namespace

double cross_entropy_value(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    total += mx + std::log(s) - row[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(logits.rows());
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  check_labels(lv, labels);
  const std::size_t n = lv.rows(), d = lv.cols();
  auto probs = std::make_shared<Tensor>(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      probs->at(r, j) = std::exp(row[j] - mx);
      s += probs->at(r, j);
    }
    for (std::size_t j = 0; j < d; ++j) probs->at(r, j) /= s;
    total += mx + std::log(s) - row[static_cast<std::size_t>(labels[r])];
  }
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t lid = logits.id();
  const Var in[] = {logits};
  return logits.graph()->record(
      Tensor::scalar(total / static_cast<double>(n)), in,
      [lid, probs, ys, n, d](Graph& g, std::size_t self) {
        const double scale = g.grad(self)[0] / static_cast<double>(n);
        Tensor& dl = g.grad_buffer(lid);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j)
            dl.at(r, j) += scale * (probs->at(r, j) - (static_cast<int>(j) == ys[r] ? 1.0 : 0.0));
      });
}

void AamParams::validate() const {
  if (!(scale > 0.0)) throw ParameterError("AAM scale must be positive");
  if (!(margin >= 0.0 && margin < M_PI / 2)) throw ParameterError("AAM margin must lie in [0, pi/2)");
}

Var aam_margin_logits(Var cosines, std::span<const int> labels, const AamParams& params) {
  params.validate();
  const Tensor& cv = cosines.value();
  check_labels(cv, labels);
  const double s = params.scale, cos_m = std::cos(params.margin), sin_m = std::sin(params.margin);
  const double threshold = std::cos(M_PI - params.margin);
  const std::size_t n = cv.rows();
  Tensor out(cv.shape());
  auto target_slope = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < cv.cols(); ++j) out.at(r, j) = s * cv.at(r, j);
    const auto y = static_cast<std::size_t>(labels[r]);
    const double c = cv.at(r, y);
    double value, slope;
    if (c > threshold) {
      const double sin_t = std::sqrt(std::max(1.0 - c * c, 0.0));
      value = c * cos_m - sin_t * sin_m;
      slope = sin_t > 1e-12 ? cos_m + c * sin_m / sin_t : cos_m;
    } else {
      value = c - params.margin * sin_m;
      slope = 1.0;
    }
    out.at(r, y) = s * value;
    (*target_slope)[r] = s * slope;
  }
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t cid = cosines.id();
  const Var in[] = {cosines};
  return cosines.graph()->record(
      std::move(out), in, [cid, ys, s, target_slope](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        Tensor& dc = g.grad_buffer(cid);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t j = 0; j < dy.cols(); ++j)
            dc.at(r, j) += dy.at(r, j) *
                           (static_cast<int>(j) == ys[r] ? (*target_slope)[r] : s);
      });
}

Var cosine_logits(Var embeddings, Var class_weights) {
  const Tensor& ev = embeddings.value();
  if (ev.rank() != 2) throw DimensionError("embeddings must be a matrix");
  for (std::size_t r = 0; r < ev.rows(); ++r)
    if (l2_norm(ev.row(r)) == 0.0) throw DataError("zero-norm embedding in cosine logits");
  return ops::matmul_nt(ops::l2_normalize(embeddings), ops::l2_normalize(class_weights));
}

Var aam_loss(Var embeddings, Var class_weights, std::span<const int> labels,
             const AamParams& params) {
  return cross_entropy(aam_margin_logits(cosine_logits(embeddings, class_weights), labels, params),
                       labels);
}

double aam_loss_value(const Tensor& embeddings, const Tensor& class_weights,
                      std::span<const int> labels, const AamParams& params) {
  Graph g;
  return aam_loss(g.constant(embeddings), g.constant(class_weights), labels, params).value()[0];
}

}  // namespace spkmoco
