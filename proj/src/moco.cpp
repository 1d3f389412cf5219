#include "spkmoco/moco.hpp"

#include <algorithm>
#include <cmath>

#include "spkmoco/errors.hpp"
#include "spkmoco/objectives.hpp"

namespace spkmoco {

namespace {

constexpr double kUnitNormTolerance = 1e-4;

void require_unit_rows(const Tensor& t, const char* what) {
  if (t.empty()) return;
  for (std::size_t r = 0; r < t.rows(); ++r)
    if (std::abs(l2_norm(t.row(r)) - 1.0) > kUnitNormTolerance)
      throw ContractError(std::string(what) + " row " + std::to_string(r) + " is not unit norm");
}

Tensor l2_normalize_rows(const Tensor& t) {
  Tensor out = t;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double n = std::max(l2_norm(t.row(r)), 1e-12);
    for (auto& v : out.row(r)) v /= n;
  }
  return out;
}

}  // namespace

void MoCoConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("MoCo beta must lie in [0,1]");
  if (!(tau > 0.0)) throw ParameterError("MoCo temperature must be positive");
  if (n_shuffle_groups == 0) throw ParameterError("n_shuffle_groups must be positive");
}

KeyQueue::KeyQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (dim == 0) throw ParameterError("queue key dimension must be positive");
  if (capacity > 0) keys_ = Tensor({capacity, dim});
}

void KeyQueue::init_random(Rng& rng) {
  for (std::size_t r = 0; r < capacity_; ++r) {
    auto row = keys_.row(r);
    double n = 0.0;
    while (n < 1e-8) {
      for (auto& v : row) v = rng.normal();
      n = l2_norm(row);
    }
    for (auto& v : row) v /= n;
  }
  ptr_ = 0;
}

void KeyQueue::enqueue(const Tensor& keys) {
  if (keys.rank() != 2 || keys.cols() != dim_)
    throw DimensionError("enqueue: keys " + shape_string(keys.shape()) + " vs queue width " +
                         std::to_string(dim_));
  if (keys.rows() > capacity_)
    throw ParameterError("enqueue: " + std::to_string(keys.rows()) +
                         " keys exceed queue capacity " + std::to_string(capacity_));
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    std::copy_n(keys.data() + r * dim_, dim_, keys_.data() + ptr_ * dim_);
    ptr_ = (ptr_ + 1) % capacity_;
  }
}

void KeyQueue::restore(Tensor keys, std::size_t ptr) {
  if (keys.empty() ? capacity_ != 0 : keys.shape() != keys_.shape())
    throw DimensionError("restored queue shape does not match");
  if (capacity_ > 0 && ptr >= capacity_) throw DimensionError("queue pointer out of range");
  require_unit_rows(keys, "queue");
  keys_ = std::move(keys);
  ptr_ = ptr;
}

MoCoState init_moco(const EncoderState& encoder, const MoCoConfig& config, Rng& queue_rng) {
  config.validate();
  MoCoState s;
  s.config = config;
  s.encoder_q = encoder;
  s.encoder_k = encoder;
  s.queue = KeyQueue(config.queue_size, encoder.config.embed_b_dim);
  s.queue.init_random(queue_rng);
  return s;
}

void momentum_update(EncoderState& key, const EncoderState& query, double beta) {
  if (!(key.config == query.config)) throw DimensionError("momentum update: configs differ");
  for (auto& [name, kp] : key.params) {
    const Parameter& qp = query.params.at(name);
    if (qp.value.shape() != kp.value.shape())
      throw DimensionError("momentum update: shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < kp.value.size(); ++i)
      kp.value[i] = beta * kp.value[i] + (1.0 - beta) * qp.value[i];
  }
}

void momentum_update(MoCoState& state) {
  momentum_update(state.encoder_k, state.encoder_q, state.config.beta);
}

Tensor contrastive_logits(const Tensor& q, const Tensor& k_pos, const Tensor& queue, double tau) {
  if (q.shape() != k_pos.shape())
    throw DimensionError("contrastive: q and k_pos shapes differ");
  const std::size_t n = q.rows(), d = q.cols(), k = queue.empty() ? 0 : queue.rows();
  if (k > 0 && queue.cols() != d) throw DimensionError("contrastive: queue width differs");
  Tensor logits({n, 1 + k});
  for (std::size_t r = 0; r < n; ++r) {
    double pos = 0.0;
    for (std::size_t j = 0; j < d; ++j) pos += q.at(r, j) * k_pos.at(r, j);
    logits.at(r, 0) = pos / tau;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += q.at(r, j) * queue.at(c, j);
      logits.at(r, 1 + c) = s / tau;
    }
  }
  return logits;
}

Var contrastive_loss(Var q, const Tensor& k_pos, const Tensor& queue, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (q.value().shape() != k_pos.shape())
    throw DimensionError("contrastive: q " + shape_string(q.value().shape()) + " vs k_pos " +
                         shape_string(k_pos.shape()));
  require_unit_rows(q.value(), "query");
  require_unit_rows(k_pos, "positive key");
  require_unit_rows(queue, "queue");
  Graph& g = *q.graph();
  Var logits = ops::row_dot(q, g.constant(k_pos));
  if (!queue.empty()) logits = ops::concat_cols(logits, ops::matmul_nt(q, g.constant(queue)));
  logits = ops::scale(logits, 1.0 / tau);
  const std::vector<int> labels(q.value().rows(), 0);
  return cross_entropy(logits, labels);
}

KeyShuffle shuffle_keys(std::size_t batch, std::size_t n_groups, Rng& rng) {
  if (n_groups == 0 || batch % n_groups != 0)
    throw DimensionError("batch of " + std::to_string(batch) + " not divisible into " +
                         std::to_string(n_groups) + " shuffle groups");
  KeyShuffle s;
  s.perm.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) s.perm[i] = i;
  rng.shuffle(s.perm.begin(), s.perm.end());
  s.inverse.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) s.inverse[s.perm[i]] = i;
  return s;
}

Tensor encode_keys(EncoderState& encoder_k, std::span<const FeatureMatrix> segments,
                   const KeyShuffle& shuffle, std::size_t n_groups) {
  const std::size_t b = segments.size();
  if (shuffle.perm.size() != b) throw DimensionError("shuffle size differs from batch");
  std::vector<FeatureMatrix> shuffled;
  shuffled.reserve(b);
  for (std::size_t i = 0; i < b; ++i) shuffled.push_back(segments[shuffle.perm[i]]);
  Graph g;
  ForwardOptions opt;
  opt.train = true;
  opt.requires_grad = false;
  opt.bn_groups = n_groups;
  opt.update_running_stats = false;
  const EncoderOutputs out = encode(g, encoder_k, stack_batch(shuffled), b, opt);
  const Tensor keys_shuffled = l2_normalize_rows(out.embedding.value());
  Tensor keys(keys_shuffled.shape());
  const std::size_t d = keys.cols();
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(keys_shuffled.data() + i * d, d, keys.data() + shuffle.perm[i] * d);
  return keys;
}

MoCoStepResult moco_step(MoCoState& state, std::span<const FeatureMatrix* const> utterances,
                         const AugmentPolicy& policy, OptimizerState& optimizer, Rng& rng) {
  const std::size_t b = utterances.size();
  if (b == 0) throw DataError("empty MoCo batch");
  if (b > state.queue.capacity() && state.queue.capacity() > 0)
    throw ParameterError("batch larger than the key queue");
  std::size_t shortest = SIZE_MAX;
  for (const auto* u : utterances) shortest = std::min(shortest, u->num_frames());
  if (shortest < policy.crop_min)
    throw DataError("utterance shorter than crop_min in MoCo batch");
  const auto hi = static_cast<std::int64_t>(std::min(policy.crop_max, shortest));
  const auto lo = static_cast<std::int64_t>(policy.crop_min);

  MoCoStepResult result;
  result.length_a = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  result.length_b = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  std::vector<FeatureMatrix> views_a, views_b;
  views_a.reserve(b);
  views_b.reserve(b);
  for (const auto* u : utterances) {
    Rng view_rng(rng.next_u64());
    auto [a, v] = make_views(*u, result.length_a, result.length_b, policy, view_rng);
    views_a.push_back(std::move(a));
    views_b.push_back(std::move(v));
  }

  const std::size_t groups = state.config.n_shuffle_groups;
  const KeyShuffle shuffle = shuffle_keys(b, groups, rng);
  const Tensor keys = encode_keys(state.encoder_k, views_b, shuffle, groups);

  state.encoder_q.params.zero_grad();
  {
    Graph g;
    ForwardOptions opt;
    opt.train = true;
    opt.requires_grad = true;
    opt.bn_groups = groups;
    const EncoderOutputs out = encode(g, state.encoder_q, stack_batch(views_a), b, opt);
    const Var q = ops::l2_normalize(out.embedding);
    const Var loss = contrastive_loss(q, keys, state.queue.keys(), state.config.tau);
    g.backward(loss);
    result.loss = loss.value()[0];
  }
  result.grad_norm = sgd_step(state.encoder_q.params, optimizer).grad_norm;
  momentum_update(state);
  if (state.queue.capacity() > 0) state.queue.enqueue(keys);
  ++state.step;
  result.keys = keys;
  return result;
}

}  // namespace spkmoco
