#include "spkmoco/encoder.hpp"

#include <cmath>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

const char* const kFrameNames[kNumFrameLayers] = {"frame1", "frame2", "frame3", "frame4",
                                                  "frame5"};

// Resolves parameters either as graph leaves of a mutable state or as
// constants of a frozen one.
class Binder {
 public:
  Binder(Graph& g, EncoderState* mutable_state, const EncoderState& state, bool requires_grad)
      : g_(g), mutable_(mutable_state), state_(state), requires_grad_(requires_grad) {}

  Var bind(const std::string& name) {
    if (mutable_ && requires_grad_) return g_.parameter(mutable_->params.at(name));
    return g_.constant(state_.params.at(name).value);
  }
  const Tensor& buffer(const std::string& name) const { return state_.params.at(name).value; }
  Tensor* mutable_buffer(const std::string& name) {
    return mutable_ ? &mutable_->params.at(name).value : nullptr;
  }

 private:
  Graph& g_;
  EncoderState* mutable_;
  const EncoderState& state_;
  bool requires_grad_;
};

Var affine_relu_bn(Binder& b, const std::string& layer, Var x, const EncoderConfig& cfg,
                   const ForwardOptions& opt) {
  Var h = ops::affine(x, b.bind(layer + ".affine.weight"), b.bind(layer + ".affine.bias"));
  h = ops::relu(h);
  BatchNormOptions bn;
  bn.train = opt.train;
  bn.groups = opt.bn_groups;
  bn.eps = cfg.bn_eps;
  bn.momentum = cfg.bn_momentum;
  const bool update = opt.train && opt.update_running_stats;
  return ops::batch_norm(h, b.bind(layer + ".bn.gamma"), b.bind(layer + ".bn.beta"),
                         b.buffer(layer + ".bn.running_mean"), b.buffer(layer + ".bn.running_var"),
                         bn, update ? b.mutable_buffer(layer + ".bn.running_mean") : nullptr,
                         update ? b.mutable_buffer(layer + ".bn.running_var") : nullptr);
}

EncoderOutputs forward(Graph& g, Binder& b, const EncoderConfig& cfg, const Tensor& frames,
                       std::size_t batch, const ForwardOptions& opt) {
  if (frames.rank() != 2 || frames.cols() != cfg.input_dim)
    throw DimensionError("encoder input " + shape_string(frames.shape()) + " does not have " +
                         std::to_string(cfg.input_dim) + " columns");
  if (batch == 0 || frames.rows() % batch != 0)
    throw DimensionError("encoder input rows not divisible by batch size");
  const std::size_t t = frames.rows() / batch;
  if (t < receptive_field())
    throw DataError("segment of " + std::to_string(t) + " frames is shorter than the " +
                    std::to_string(receptive_field()) + "-frame receptive field");

  EncoderOutputs out;
  Var x = g.constant(frames);
  const auto& contexts = frame_contexts();
  for (std::size_t l = 0; l < kNumFrameLayers; ++l) {
    if (contexts[l].size() > 1) x = ops::splice(x, batch, contexts[l]);
    x = affine_relu_bn(b, kFrameNames[l], x, cfg, opt);
  }
  out.frames = x;
  out.pooled = ops::stats_pooling(x, batch, cfg.variance_floor);
  out.embed_a = affine_relu_bn(b, "embed_a", out.pooled, cfg, opt);
  Var h = out.embed_a;
  if (opt.train && opt.dropout_p > 0.0) {
    if (!opt.rng) throw ContractError("dropout requires a random stream");
    h = ops::dropout(h, opt.dropout_p, true, *opt.rng);
  }
  out.embedding = ops::affine(h, b.bind("embed_b.affine.weight"), b.bind("embed_b.affine.bias"));
  return out;
}

void add_affine(ParameterSet& params, const std::string& layer, std::size_t in, std::size_t out,
                Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  Tensor w({out, in});
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  params.add(layer + ".affine.weight", std::move(w));
  params.add(layer + ".affine.bias", Tensor({out}, 0.0));
}

void add_bn(ParameterSet& params, const std::string& layer, std::size_t width) {
  params.add(layer + ".bn.gamma", Tensor({width}, 1.0));
  params.add(layer + ".bn.beta", Tensor({width}, 0.0));
  params.add(layer + ".bn.running_mean", Tensor({width}, 0.0), false);
  params.add(layer + ".bn.running_var", Tensor({width}, 1.0), false);
}

}  // namespace

const std::array<std::vector<int>, kNumFrameLayers>& frame_contexts() {
  static const std::array<std::vector<int>, kNumFrameLayers> contexts{
      std::vector<int>{-2, -1, 0, 1, 2}, std::vector<int>{-2, 0, 2}, std::vector<int>{-3, 0, 3},
      std::vector<int>{0}, std::vector<int>{0}};
  return contexts;
}

std::size_t receptive_field() {
  std::size_t span = 0;
  for (const auto& c : frame_contexts()) span += static_cast<std::size_t>(c.back() - c.front());
  return span + 1;
}

void EncoderConfig::validate() const {
  if (input_dim == 0 || embed_a_dim == 0 || embed_b_dim == 0)
    throw ParameterError("encoder dimensions must be positive");
  for (auto d : frame_dims)
    if (d == 0) throw ParameterError("encoder dimensions must be positive");
  if (!(variance_floor > 0.0)) throw ParameterError("variance floor must be positive");
}

EncoderState init_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  EncoderState state;
  state.config = config;
  const auto& contexts = frame_contexts();
  std::size_t in = config.input_dim;
  for (std::size_t l = 0; l < kNumFrameLayers; ++l) {
    add_affine(state.params, kFrameNames[l], contexts[l].size() * in, config.frame_dims[l], rng);
    add_bn(state.params, kFrameNames[l], config.frame_dims[l]);
    in = config.frame_dims[l];
  }
  add_affine(state.params, "embed_a", config.pooled_dim(), config.embed_a_dim, rng);
  add_bn(state.params, "embed_a", config.embed_a_dim);
  add_affine(state.params, "embed_b", config.embed_a_dim, config.embed_b_dim, rng);
  return state;
}

EncoderOutputs encode(Graph& g, EncoderState& state, const Tensor& frames, std::size_t batch,
                      const ForwardOptions& opt) {
  Binder b(g, &state, state, opt.requires_grad);
  return forward(g, b, state.config, frames, batch, opt);
}

EncoderOutputs encode_eval(Graph& g, const EncoderState& state, const Tensor& frames,
                           std::size_t batch) {
  Binder b(g, nullptr, state, false);
  ForwardOptions opt;
  opt.train = false;
  opt.requires_grad = false;
  return forward(g, b, state.config, frames, batch, opt);
}

Embedding extract_embedding(const EncoderState& state, const FeatureMatrix& features,
                            std::string utterance_id) {
  Graph g;
  const EncoderOutputs out = encode_eval(g, state, features.to_tensor(), 1);
  const Tensor& e = out.embedding.value();
  return Embedding{std::move(utterance_id), std::vector<double>(e.values().begin(), e.values().end())};
}

Tensor stack_batch(std::span<const FeatureMatrix> segments) {
  if (segments.empty()) throw DataError("empty batch");
  const std::size_t t = segments.front().num_frames(), d = segments.front().dim;
  std::vector<double> data;
  data.reserve(segments.size() * t * d);
  for (const auto& s : segments) {
    if (s.num_frames() != t || s.dim != d)
      throw DimensionError("batch segments must share length and dimension");
    data.insert(data.end(), s.frames.begin(), s.frames.end());
  }
  return Tensor({segments.size() * t, d}, std::move(data));
}

}  // namespace spkmoco
