#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spkmoco/tensor.hpp"

namespace spkmoco {

// SGD with heavy-ball momentum, L2 weight decay and global-norm clipping.
struct OptimizerState {
  std::map<std::string, Tensor> velocity;
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::optional<double> max_grad_norm = 2.0;
};

struct StepStats {
  double grad_norm = 0.0;     // before clipping
  double applied_norm = 0.0;  // after clipping, before weight decay
};

// Named references into one or more parameter sets; lets a single optimizer
// step span an encoder and its head.
using ParamRefs = std::vector<std::pair<std::string, Parameter*>>;

void collect_params(ParamRefs& refs, ParameterSet& params, const std::string& prefix = "");

double global_grad_norm(const ParamRefs& params);

// Scales every gradient by max_norm / g when the global norm g exceeds
// max_norm. Returns the norm after clipping.
double clip_grad_norm(const ParamRefs& params, double max_norm);

// One update over the trainable parameters of `params` using their grad
// fields. Throws DivergenceError on a non-finite gradient.
StepStats sgd_step(const ParamRefs& params, OptimizerState& opt);
StepStats sgd_step(ParameterSet& params, OptimizerState& opt);

// lr_start * (lr_end / lr_start)^(step / total_steps).
double exponential_lr(double lr_start, double lr_end, std::size_t step, std::size_t total_steps);

}  // namespace spkmoco
