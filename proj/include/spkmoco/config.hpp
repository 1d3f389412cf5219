#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spkmoco/augment.hpp"
#include "spkmoco/encoder.hpp"
#include "spkmoco/features.hpp"
#include "spkmoco/head.hpp"
#include "spkmoco/moco.hpp"

namespace spkmoco {

enum class Workflow { ce, aam, moco };

Workflow parse_workflow(const std::string& name);
const char* workflow_name(Workflow w);

// Everything a training run needs. Serialized as one JSON object with flat
// dotted keys ("optim.lr_start": 1e-4); see config_keys() for the namespace.
struct RunConfig {
  Workflow workflow = Workflow::aam;

  std::filesystem::path train_features;  // feature archive
  std::size_t dev_per_speaker = 3;       // holdout utterances per labelled speaker
  std::size_t min_train_frames = 0;      // 0: crop_min

  EncoderConfig encoder;
  AugmentPolicy augment;
  // Supervised runs crop but skip SpecAugment unless this is set.
  bool supervised_spec_augment = false;

  AamParams aam;
  double dropout = 0.0;
  MoCoConfig moco;

  double lr_start = 1e-5;
  double lr_end = 1e-6;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::optional<double> max_grad_norm = 6.0;

  std::size_t steps = 1000;
  std::size_t steps_per_epoch = 100;
  std::size_t batch_size = 1024;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "run";
  std::optional<std::filesystem::path> init_from;

  // Workflow-dependent values (learning rates, clipping, dropout, batch).
  static RunConfig defaults(Workflow workflow);

  // Ranges only; paths are checked by validate_paths.
  void validate() const;
  void validate_paths() const;
};

// Documented key list, in file order.
std::vector<std::string> config_keys();

// `workflow` is read first so the remaining keys override its defaults.
// Unknown keys are a ParameterError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Applies "key=value" overrides, values in JSON syntax (bare strings allowed).
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);
std::string config_to_json(const RunConfig& config);

}  // namespace spkmoco
