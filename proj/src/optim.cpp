#include "spkmoco/optim.hpp"

#include <cmath>

#include "spkmoco/errors.hpp"

namespace spkmoco {

void collect_params(ParamRefs& refs, ParameterSet& params, const std::string& prefix) {
  for (auto& [name, p] : params)
    if (p.trainable) refs.emplace_back(prefix + name, &p);
}

double global_grad_norm(const ParamRefs& params) {
  double s = 0.0;
  for (const auto& [_, p] : params)
    for (double g : p->grad.values()) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(const ParamRefs& params, double max_norm) {
  const double g = global_grad_norm(params);
  if (!(g > max_norm)) return g;
  const double ratio = max_norm / g;
  for (const auto& [_, p] : params)
    for (auto& v : p->grad.values()) v *= ratio;
  return global_grad_norm(params);
}

StepStats sgd_step(const ParamRefs& params, OptimizerState& opt) {
  if (!(opt.lr >= 0.0)) throw ParameterError("learning rate must be nonnegative");
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0))
    throw ParameterError("momentum must lie in [0,1)");
  if (opt.weight_decay < 0.0) throw ParameterError("weight decay must be nonnegative");
  if (opt.max_grad_norm && !(*opt.max_grad_norm > 0.0))
    throw ParameterError("max gradient norm must be positive");

  for (const auto& [name, p] : params) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
    if (!p->grad.all_finite()) throw DivergenceError("non-finite gradient for '" + name + "'");
  }

  StepStats stats;
  stats.grad_norm = global_grad_norm(params);
  if (!std::isfinite(stats.grad_norm)) throw DivergenceError("gradient norm overflow");
  stats.applied_norm =
      opt.max_grad_norm ? clip_grad_norm(params, *opt.max_grad_norm) : stats.grad_norm;

  for (const auto& [name, p] : params) {
    auto it = opt.velocity.try_emplace(name, p->value.shape()).first;
    Tensor& v = it->second;
    if (v.shape() != p->value.shape())
      throw DimensionError("velocity shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double g = p->grad[i] + opt.weight_decay * p->value[i];
      v[i] = opt.momentum * v[i] + g;
      p->value[i] -= opt.lr * v[i];
    }
    if (!p->value.all_finite()) throw DivergenceError("parameter '" + name + "' became non-finite");
  }
  return stats;
}

StepStats sgd_step(ParameterSet& params, OptimizerState& opt) {
  ParamRefs refs;
  collect_params(refs, params);
  return sgd_step(refs, opt);
}

double exponential_lr(double lr_start, double lr_end, std::size_t step, std::size_t total_steps) {
  if (!(lr_start >= lr_end && lr_end > 0.0))
    throw ParameterError("learning-rate schedule requires lr_start >= lr_end > 0");
  if (total_steps == 0) return lr_start;
  if (step >= total_steps) return lr_end;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_start * std::pow(lr_end / lr_start, frac);
}

}  // namespace spkmoco
