#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "spkmoco/autodiff.hpp"
#include "spkmoco/features.hpp"
#include "spkmoco/rng.hpp"

namespace spkmoco {

inline constexpr std::size_t kNumFrameLayers = 5;

// Temporal contexts of frame1..frame5: [t-2,t+2], {t-2,t,t+2}, {t-3,t,t+3}, {t}, {t}.
const std::array<std::vector<int>, kNumFrameLayers>& frame_contexts();
// Frames consumed by the frame-level stack: T' = T - (receptive_field - 1).
std::size_t receptive_field();

struct EncoderConfig {
  std::size_t input_dim = 30;
  std::array<std::size_t, kNumFrameLayers> frame_dims{512, 512, 512, 512, 1500};
  std::size_t embed_a_dim = 512;
  std::size_t embed_b_dim = 512;
  double variance_floor = 1e-10;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t pooled_dim() const { return 2 * frame_dims.back(); }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Table-2 TDNN parameters, keyed "<layer>.affine.weight", "<layer>.bn.gamma",
// ... for layers frame1..frame5, embed_a, embed_b. Batch-norm running
// statistics are non-trainable buffers.
struct EncoderState {
  EncoderConfig config;
  ParameterSet params;
};

// Kaiming-uniform (fan-in) weights, zero biases, unit BN scale, zero shift.
EncoderState init_encoder(const EncoderConfig& config, Rng& rng);

struct ForwardOptions {
  bool train = false;
  // Bind parameters as trainable leaves; false gives a gradient-blocked pass.
  bool requires_grad = true;
  // Contiguous sample groups with separate BN statistics (train mode only).
  std::size_t bn_groups = 1;
  bool update_running_stats = true;
  // Dropout on the input of embed_b (train mode only).
  double dropout_p = 0.0;
  Rng* rng = nullptr;
};

struct EncoderOutputs {
  Var frames;     // (B*T')×frame5
  Var pooled;     // B×2*frame5
  Var embed_a;    // B×embed_a after ReLU+BN
  Var embedding;  // B×embed_b, affine output before any nonlinearity
};

// Forward over B equal-length sequences stacked row-wise in `frames`
// ((B*T)×d). Throws DataError when T < 15.
EncoderOutputs encode(Graph& g, EncoderState& state, const Tensor& frames, std::size_t batch,
                      const ForwardOptions& opt);
// Eval-mode forward that never mutates the state.
EncoderOutputs encode_eval(Graph& g, const EncoderState& state, const Tensor& frames,
                           std::size_t batch);

struct Embedding {
  std::string utterance_id;
  std::vector<double> vector;
};

// Eval-mode embed_b output for one utterance of voiced frames.
Embedding extract_embedding(const EncoderState& state, const FeatureMatrix& features,
                            std::string utterance_id = {});

// Stacks equal-length feature matrices into a (B*T)×d tensor.
Tensor stack_batch(std::span<const FeatureMatrix> segments);

}  // namespace spkmoco
