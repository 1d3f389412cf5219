#pragma once

#include <span>

#include "spkmoco/autodiff.hpp"

namespace spkmoco {

// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);
// Value-only version on a plain matrix; same max-subtracted evaluation.
double cross_entropy_value(const Tensor& logits, std::span<const int> labels);

struct AamParams {
  double scale = 32.0;   // s
  double margin = 0.3;   // m, radians

  void validate() const;
};

// Given cosines (N×D), returns s*cos(theta_y + m) in the label column and
// s*cos(theta_j) elsewhere. When cos(theta_y) <= cos(pi - m) the target uses
// the monotone fallback cos(theta_y) - m*sin(m).
Var aam_margin_logits(Var cosines, std::span<const int> labels, const AamParams& params);

// Cosine matrix between L2-normalized embeddings (N×E) and class weights (D×E).
Var cosine_logits(Var embeddings, Var class_weights);

// Additive angular margin softmax loss.
Var aam_loss(Var embeddings, Var class_weights, std::span<const int> labels,
             const AamParams& params);
double aam_loss_value(const Tensor& embeddings, const Tensor& class_weights,
                      std::span<const int> labels, const AamParams& params);

}  // namespace spkmoco
