#pragma once

#include <span>

#include "spkmoco/encoder.hpp"
#include "spkmoco/objectives.hpp"

namespace spkmoco {

enum class HeadKind { ce, aam };

HeadKind parse_head_kind(const std::string& s);
const char* head_kind_name(HeadKind kind);

// Layers attached after embed_b for supervised training.
//   ce:  ReLU -> BN -> affine(E -> D); softmax cross entropy on its output.
//   aam: class-weight matrix D×E used through normalized cosines with margin.
struct HeadConfig {
  HeadKind kind = HeadKind::aam;
  std::size_t num_classes = 2;
  std::size_t embed_dim = 512;
  AamParams aam;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
};

// Parameters named "bn.*", "affine.*" (ce) or "aam.weight" (aam).
ParameterSet init_head(const HeadConfig& config, Rng& rng);

// Logits for cross_entropy: plain class scores (ce) or margin-adjusted scaled
// cosines (aam, which needs the labels).
Var classifier_logits(Graph& g, ParameterSet& head, const HeadConfig& config, Var embedding,
                      std::span<const int> labels, bool train);

}  // namespace spkmoco
