#include "spkmoco/head.hpp"

#include <cmath>

#include "spkmoco/errors.hpp"

namespace spkmoco {

HeadKind parse_head_kind(const std::string& s) {
  if (s == "ce") return HeadKind::ce;
  if (s == "aam") return HeadKind::aam;
  throw ParameterError("unknown head kind '" + s + "' (expected ce or aam)");
}

const char* head_kind_name(HeadKind kind) { return kind == HeadKind::ce ? "ce" : "aam"; }

void HeadConfig::validate() const {
  if (num_classes < 2)
    throw ParameterError("classifier head needs at least 2 classes, got " +
                         std::to_string(num_classes));
  if (embed_dim == 0) throw ParameterError("embedding dimension must be positive");
  if (kind == HeadKind::aam) aam.validate();
}

ParameterSet init_head(const HeadConfig& config, Rng& rng) {
  config.validate();
  ParameterSet head;
  const double bound = std::sqrt(6.0 / static_cast<double>(config.embed_dim));
  Tensor w({config.num_classes, config.embed_dim});
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  if (config.kind == HeadKind::aam) {
    head.add("aam.weight", std::move(w));
  } else {
    head.add("bn.gamma", Tensor({config.embed_dim}, 1.0));
    head.add("bn.beta", Tensor({config.embed_dim}, 0.0));
    head.add("bn.running_mean", Tensor({config.embed_dim}, 0.0), false);
    head.add("bn.running_var", Tensor({config.embed_dim}, 1.0), false);
    head.add("affine.weight", std::move(w));
    head.add("affine.bias", Tensor({config.num_classes}, 0.0));
  }
  return head;
}

Var classifier_logits(Graph& g, ParameterSet& head, const HeadConfig& config, Var embedding,
                      std::span<const int> labels, bool train) {
  config.validate();
  if (embedding.value().cols() != config.embed_dim)
    throw DimensionError("head expects embeddings of width " + std::to_string(config.embed_dim));
  if (config.kind == HeadKind::aam) {
    const Var cos = cosine_logits(embedding, g.parameter(head.at("aam.weight")));
    return aam_margin_logits(cos, labels, config.aam);
  }
  BatchNormOptions bn;
  bn.train = train;
  bn.eps = config.bn_eps;
  bn.momentum = config.bn_momentum;
  Var h = ops::relu(embedding);
  h = ops::batch_norm(h, g.parameter(head.at("bn.gamma")), g.parameter(head.at("bn.beta")),
                      head.at("bn.running_mean").value, head.at("bn.running_var").value, bn,
                      train ? &head.at("bn.running_mean").value : nullptr,
                      train ? &head.at("bn.running_var").value : nullptr);
  return ops::affine(h, g.parameter(head.at("affine.weight")), g.parameter(head.at("affine.bias")));
}

}  // namespace spkmoco
