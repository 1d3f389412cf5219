#pragma once

#include <span>
#include <vector>

#include "spkmoco/augment.hpp"
#include "spkmoco/encoder.hpp"
#include "spkmoco/optim.hpp"

namespace spkmoco {

struct MoCoConfig {
  std::size_t queue_size = 10000;  // K
  double beta = 0.99;              // key-encoder momentum
  double tau = 0.07;               // softmax temperature
  std::size_t n_shuffle_groups = 4;

  void validate() const;
};

// FIFO ring of unit-norm keys. Writes start at ptr() and wrap modulo K,
// overwriting the oldest entries.
class KeyQueue {
 public:
  KeyQueue() = default;
  KeyQueue(std::size_t capacity, std::size_t dim);

  // Fills every slot with an independent uniformly random unit vector.
  void init_random(Rng& rng);
  // keys: N×dim with N <= capacity.
  void enqueue(const Tensor& keys);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t ptr() const { return ptr_; }
  // capacity×dim; empty when capacity is 0.
  const Tensor& keys() const { return keys_; }

  // Restores a saved queue; rows must be unit norm.
  void restore(Tensor keys, std::size_t ptr);

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t ptr_ = 0;
  Tensor keys_;
};

struct MoCoState {
  MoCoConfig config;
  EncoderState encoder_q;
  EncoderState encoder_k;
  KeyQueue queue;
  std::size_t step = 0;
};

// encoder_k starts as an exact copy of encoder_q; the queue is random.
MoCoState init_moco(const EncoderState& encoder, const MoCoConfig& config, Rng& queue_rng);

// key <- beta*key + (1-beta)*query for every parameter and BN buffer.
void momentum_update(EncoderState& key, const EncoderState& query, double beta);
void momentum_update(MoCoState& state);

// InfoNCE: per row, logits [q·k_pos, q·queue_1..K] / tau with the positive at
// index 0; mean cross entropy. k_pos and queue carry no gradient. Rows of q,
// k_pos and queue must be unit norm within 1e-4.
Var contrastive_loss(Var q, const Tensor& k_pos, const Tensor& queue, double tau);
// [q·k_pos, q·queueᵀ] / tau as a plain matrix.
Tensor contrastive_logits(const Tensor& q, const Tensor& k_pos, const Tensor& queue, double tau);

struct KeyShuffle {
  std::vector<std::size_t> perm;     // shuffled[i] = original[perm[i]]
  std::vector<std::size_t> inverse;  // original[j] = shuffled[inverse[j]]
};

// Random permutation of a batch whose size must divide into n_groups.
KeyShuffle shuffle_keys(std::size_t batch, std::size_t n_groups, Rng& rng);

// L2-normalized key embeddings of `segments` from the key encoder in train
// mode with per-group BN after shuffling; rows returned in original order.
// No gradient and no running-statistic update.
Tensor encode_keys(EncoderState& encoder_k, std::span<const FeatureMatrix> segments,
                   const KeyShuffle& shuffle, std::size_t n_groups);

struct MoCoStepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t length_a = 0;
  std::size_t length_b = 0;
  Tensor keys;  // the batch keys that were enqueued
};

// One MoCo iteration over a batch of voiced-frame utterances: two augmented
// views each, query/key encoding, contrastive loss, SGD on encoder_q,
// momentum update of encoder_k, enqueue of the new keys.
MoCoStepResult moco_step(MoCoState& state, std::span<const FeatureMatrix* const> utterances,
                         const AugmentPolicy& policy, OptimizerState& optimizer, Rng& rng);

}  // namespace spkmoco
