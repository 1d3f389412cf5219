#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <numeric>

#include "spkmoco/errors.hpp"
#include "spkmoco/gradcheck.hpp"
#include "spkmoco/moco.hpp"
#include "spkmoco/objectives.hpp"
#include "spkmoco/synthetic.hpp"
#include "test_util.hpp"

using namespace spkmoco;
using spkmoco::testing::random_features;
using spkmoco::testing::random_tensor;
using spkmoco::testing::unit_rows;

namespace {

EncoderConfig tiny_encoder(std::size_t input_dim = 8) {
  EncoderConfig c;
  c.input_dim = input_dim;
  c.frame_dims = {16, 16, 16, 16, 24};
  c.embed_a_dim = 16;
  c.embed_b_dim = 12;
  return c;
}

AugmentPolicy tiny_policy() {
  AugmentPolicy p;
  p.crop_min = 30;
  p.crop_max = 45;
  p.warp_window = 3;
  p.max_time_mask = 5;
  p.max_freq_mask = 2;
  return p;
}

bool same_params(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a)
    if (!b.contains(name) || !(b.at(name).value == p.value)) return false;
  return true;
}

}  // namespace

TEST(Momentum, Endpoints) {
  Rng rng(1);
  const auto q = init_encoder(tiny_encoder(), rng);
  auto k = init_encoder(tiny_encoder(), rng);
  const auto k0 = k.params;
  momentum_update(k, q, 1.0);
  EXPECT_TRUE(same_params(k.params, k0));
  momentum_update(k, q, 0.0);
  EXPECT_TRUE(same_params(k.params, q.params));
}

TEST(Momentum, ScalarRecurrence) {
  EncoderState q, k;
  q.params.add("w", Tensor::vector({1.0}));
  k.params.add("w", Tensor::vector({0.0}));
  momentum_update(k, q, 0.99);
  EXPECT_NEAR(k.params.at("w").value[0], 0.01, 1e-15);
  momentum_update(k, q, 0.99);
  EXPECT_NEAR(k.params.at("w").value[0], 0.0199, 1e-15);
}

TEST(Momentum, ShapeMismatch) {
  Rng rng(2);
  const auto q = init_encoder(tiny_encoder(8), rng);
  auto k = init_encoder(tiny_encoder(9), rng);
  EXPECT_THROW(momentum_update(k, q, 0.5), DimensionError);
}

TEST(Contrastive, HandValue) {
  const Tensor q = Tensor::matrix(1, 3, {1, 0, 0});
  const Tensor queue = Tensor::matrix(2, 3, {0, 1, 0, 0, 0, 1});
  Graph g;
  const double loss = contrastive_loss(g.constant(q), q, queue, 1.0).value()[0];
  EXPECT_NEAR(loss, -std::log(std::exp(1.0) / (std::exp(1.0) + 2)), 1e-15);
  EXPECT_NEAR(loss, 0.5514, 1e-4);
}

TEST(Contrastive, EmptyQueueIsZero) {
  Rng rng(3);
  const Tensor q = unit_rows(4, 5, rng), k = unit_rows(4, 5, rng);
  Graph g;
  EXPECT_EQ(contrastive_loss(g.constant(q), k, Tensor(), 0.07).value()[0], 0.0);
}

TEST(Contrastive, TemperatureToZero) {
  Rng rng(4);
  const Tensor q = unit_rows(3, 6, rng);
  Tensor queue = unit_rows(10, 6, rng);
  double prev = INFINITY;
  for (double tau : {1.0, 0.1, 0.01}) {
    Graph g;
    const double loss = contrastive_loss(g.constant(q), q, queue, tau).value()[0];
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(Contrastive, RejectsUnnormalized) {
  Rng rng(5);
  Tensor q = unit_rows(2, 4, rng);
  const Tensor k = unit_rows(2, 4, rng), queue = unit_rows(3, 4, rng);
  Tensor bad = q;
  bad.at(0, 0) += 1e-3;
  Graph g;
  EXPECT_THROW(contrastive_loss(g.constant(bad), k, queue, 0.1), ContractError);
  EXPECT_THROW(contrastive_loss(g.constant(q), bad, queue, 0.1), ContractError);
}

TEST(Contrastive, EqualsCrossEntropyOnStackedLogits) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = unit_rows(5, 7, rng), k = unit_rows(5, 7, rng), queue = unit_rows(9, 7, rng);
    Graph g;
    const double loss = contrastive_loss(g.constant(q), k, queue, 0.07).value()[0];
    // Independent stacking: positive logit in column 0.
    Tensor logits({5, 10});
    for (std::size_t r = 0; r < 5; ++r) {
      double pos = 0;
      for (std::size_t c = 0; c < 7; ++c) pos += q.at(r, c) * k.at(r, c);
      logits.at(r, 0) = pos / 0.07;
      for (std::size_t j = 0; j < 9; ++j) {
        double v = 0;
        for (std::size_t c = 0; c < 7; ++c) v += q.at(r, c) * queue.at(j, c);
        logits.at(r, j + 1) = v / 0.07;
      }
    }
    EXPECT_NEAR(loss, cross_entropy_value(logits, std::vector<int>(5, 0)), 1e-12);
    EXPECT_LT(max_abs_diff(contrastive_logits(q, k, queue, 0.07), logits), 1e-12);
  }
}

TEST(Contrastive, GradientCheck) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 300);
    const Tensor k = unit_rows(3, 5, rng), queue = unit_rows(6, 5, rng);
    const Tensor raw = random_tensor({3, 5}, rng);
    EXPECT_LT(grad_check([&](Graph&, Var x) { return contrastive_loss(ops::l2_normalize(x), k, queue, 0.07); }, raw),
              1e-3);
  }
}

TEST(Queue, RingOverwrite) {
  KeyQueue q(4, 2);
  auto keys = [](double a, double b) { return Tensor::matrix(2, 2, {a, std::sqrt(1 - a * a), b, std::sqrt(1 - b * b)}); };
  q.enqueue(keys(0.1, 0.2));
  q.enqueue(keys(0.3, 0.4));
  EXPECT_EQ(q.ptr(), 0u);
  q.enqueue(keys(0.5, 0.6));
  EXPECT_EQ(q.keys().at(0, 0), 0.5);
  EXPECT_EQ(q.keys().at(1, 0), 0.6);
  EXPECT_EQ(q.keys().at(2, 0), 0.3);
  EXPECT_EQ(q.ptr(), 2u);
}

TEST(Queue, FullReplaceAndOverflow) {
  Rng rng(7);
  KeyQueue q(3, 4);
  q.init_random(rng);
  const Tensor k = unit_rows(3, 4, rng);
  q.enqueue(k);
  EXPECT_EQ(q.keys(), k);
  EXPECT_THROW(q.enqueue(unit_rows(4, 4, rng)), ParameterError);
}

TEST(Queue, ReferenceFifoModel) {
  Rng rng(8);
  for (int seq = 0; seq < 1000; ++seq) {
    const std::size_t cap = std::size_t(rng.uniform_int(1, 12));
    KeyQueue q(cap, 3);
    q.init_random(rng);
    std::vector<std::vector<double>> model(cap);
    for (std::size_t i = 0; i < cap; ++i) {
      auto r = q.keys().row(i);
      model[i].assign(r.begin(), r.end());
    }
    std::size_t head = 0;
    std::deque<std::vector<double>> recent;
    const int inserts = int(rng.uniform_int(1, 20));
    for (int i = 0; i < inserts; ++i) {
      const std::size_t n = std::size_t(rng.uniform_int(1, std::int64_t(cap)));
      const Tensor k = unit_rows(n, 3, rng);
      q.enqueue(k);
      for (std::size_t r = 0; r < n; ++r) {
        auto row = k.row(r);
        model[head].assign(row.begin(), row.end());
        head = (head + 1) % cap;
        recent.emplace_back(row.begin(), row.end());
        if (recent.size() > cap) recent.pop_front();
      }
    }
    ASSERT_EQ(q.ptr(), head);
    for (std::size_t i = 0; i < cap; ++i) {
      auto row = q.keys().row(i);
      ASSERT_EQ(std::vector<double>(row.begin(), row.end()), model[i]);
      double n2 = 0;
      for (double v : row) n2 += v * v;
      ASSERT_NEAR(n2, 1.0, 1e-12);
    }
    // Once the ring has wrapped, it holds exactly the last K inserted keys.
    if (recent.size() == cap) {
      for (std::size_t i = 0; i < cap; ++i)
        ASSERT_NE(std::find(recent.begin(), recent.end(), model[i]), recent.end());
    }
  }
}

TEST(Shuffle, InverseComposesToIdentity) {
  Rng rng(9);
  const auto s = shuffle_keys(12, 4, rng);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(s.perm[s.inverse[i]], i);
    EXPECT_EQ(s.inverse[s.perm[i]], i);
  }
  EXPECT_THROW(shuffle_keys(10, 4, rng), DimensionError);
}

TEST(Shuffle, SingleGroupMatchesUnshuffled) {
  Rng rng(10);
  auto enc = init_encoder(tiny_encoder(), rng);
  std::vector<FeatureMatrix> segs;
  for (int i = 0; i < 6; ++i) segs.push_back(random_features(20, 8, rng));
  KeyShuffle identity;
  identity.perm.resize(6);
  std::iota(identity.perm.begin(), identity.perm.end(), 0);
  identity.inverse = identity.perm;
  const Tensor plain = encode_keys(enc, segs, identity, 1);
  const Tensor shuffled = encode_keys(enc, segs, shuffle_keys(6, 1, rng), 1);
  EXPECT_LT(max_abs_diff(plain, shuffled), 1e-10);
}

TEST(Shuffle, GroupsChangeKeysOnClusteredBatch) {
  Rng rng(11);
  auto enc = init_encoder(tiny_encoder(), rng);
  std::vector<FeatureMatrix> segs;
  for (int i = 0; i < 4; ++i) {
    auto f = random_features(20, 8, rng);
    for (auto& v : f.frames) v = 0.1 * v + (i < 2 ? 3.0 : -3.0);
    segs.push_back(f);
  }
  KeyShuffle identity{{0, 1, 2, 3}, {0, 1, 2, 3}};
  KeyShuffle mixed{{0, 2, 1, 3}, {0, 2, 1, 3}};
  const Tensor a = encode_keys(enc, segs, identity, 2), b = encode_keys(enc, segs, mixed, 2);
  EXPECT_GT(max_abs_diff(a, b), 1e-3);
}

TEST(Shuffle, KeyEncodingLeavesStateUntouched) {
  Rng rng(12);
  auto enc = init_encoder(tiny_encoder(), rng);
  const auto before = enc.params;
  std::vector<FeatureMatrix> segs;
  for (int i = 0; i < 4; ++i) segs.push_back(random_features(20, 8, rng));
  const Tensor k = encode_keys(enc, segs, shuffle_keys(4, 2, rng), 2);
  EXPECT_TRUE(same_params(enc.params, before));
  for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(l2_norm(k.row(r)), 1.0, 1e-12);
}

namespace {

struct MoCoFixture {
  MoCoState state;
  std::vector<FeatureMatrix> utts;
  OptimizerState opt;
};

MoCoFixture make_fixture(double lr, double beta) {
  Rng rng(13);
  MoCoFixture f;
  MoCoConfig cfg;
  cfg.queue_size = 16;
  cfg.beta = beta;
  cfg.n_shuffle_groups = 2;
  f.state = init_moco(init_encoder(tiny_encoder(), rng), cfg, rng);
  for (int i = 0; i < 8; ++i) f.utts.push_back(random_features(60, 8, rng));
  f.opt.lr = lr;
  return f;
}

std::vector<const FeatureMatrix*> batch_of(const std::vector<FeatureMatrix>& u, std::size_t lo, std::size_t n) {
  std::vector<const FeatureMatrix*> b;
  for (std::size_t i = 0; i < n; ++i) b.push_back(&u[(lo + i) % u.size()]);
  return b;
}

}  // namespace

TEST(MoCoStep, InitEqualityAndZeroKeyGradient) {
  auto f = make_fixture(0.01, 0.9);
  EXPECT_TRUE(same_params(f.state.encoder_q.params, f.state.encoder_k.params));
  Rng rng(14);
  for (int step = 0; step < 5; ++step) {
    moco_step(f.state, batch_of(f.utts, 4 * step, 4), tiny_policy(), f.opt, rng);
    for (const auto& [name, p] : f.state.encoder_k.params) {
      if (p.grad.empty()) continue;
      for (double v : p.grad.values()) ASSERT_EQ(v, 0.0) << name;
    }
  }
  EXPECT_FALSE(same_params(f.state.encoder_q.params, f.state.encoder_k.params));
}

TEST(MoCoStep, QueueHeadHoldsBatchKeysAndStaysUnit) {
  auto f = make_fixture(0.01, 0.9);
  Rng rng(15);
  for (int step = 0; step < 6; ++step) {
    const std::size_t ptr = f.state.queue.ptr();
    const auto r = moco_step(f.state, batch_of(f.utts, 4 * step, 4), tiny_policy(), f.opt, rng);
    EXPECT_EQ(f.state.queue.ptr(), (ptr + 4) % 16);
    ASSERT_EQ(r.keys.shape(), (Shape{4, 12}));
    for (std::size_t i = 0; i < 4; ++i) {
      const auto row = f.state.queue.keys().row((ptr + i) % 16);
      const auto key = r.keys.row(i);
      EXPECT_TRUE(std::equal(row.begin(), row.end(), key.begin()));
    }
    for (std::size_t q = 0; q < 16; ++q) ASSERT_NEAR(l2_norm(f.state.queue.keys().row(q)), 1.0, 1e-6);
  }
}

TEST(MoCoStep, FrozenRunIsNoOp) {
  auto f = make_fixture(0.0, 1.0);
  f.opt.weight_decay = 0.0;
  const auto q0 = f.state.encoder_q.params, k0 = f.state.encoder_k.params;
  Rng rng(16);
  for (int step = 0; step < 3; ++step) moco_step(f.state, batch_of(f.utts, 4 * step, 4), tiny_policy(), f.opt, rng);
  for (const auto& [name, p] : f.state.encoder_q.params)
    if (p.trainable) {
      EXPECT_EQ(p.value, q0.at(name).value) << name;
    }
  EXPECT_TRUE(same_params(f.state.encoder_k.params, k0));
}

TEST(MoCoStep, SyntheticSpeakersLossDropsBelowBaseline) {
  SyntheticOptions so;
  so.n_speakers = 8;
  so.utts_per_speaker = 12;
  so.dim = 12;
  so.min_frames = 80;
  so.max_frames = 120;
  const auto corpus = make_synthetic(so);
  std::vector<FeatureMatrix> utts;
  for (const auto& u : corpus) utts.push_back(u.features);
  Rng rng(17);
  EncoderConfig ec = tiny_encoder(12);
  ec.frame_dims = {32, 32, 32, 32, 64};
  ec.embed_a_dim = 32;
  ec.embed_b_dim = 32;
  MoCoConfig mc;
  mc.queue_size = 64;
  mc.n_shuffle_groups = 2;
  MoCoState state = init_moco(init_encoder(ec, rng), mc, rng);
  OptimizerState opt;
  opt.lr = 0.05;
  AugmentPolicy pol = tiny_policy();
  pol.crop_min = 40;
  pol.crop_max = 60;
  std::vector<std::size_t> order(utts.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    if (step % 12 == 0) rng.shuffle(order.begin(), order.end());
    std::vector<const FeatureMatrix*> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(&utts[order[(step * 8 + i) % order.size()]]);
    losses.push_back(moco_step(state, batch, pol, opt, rng).loss);
  }
  const double baseline = std::log(1.0 + double(mc.queue_size));
  const double tail = std::accumulate(losses.end() - 20, losses.end(), 0.0) / 20;
  EXPECT_LT(tail, 0.8 * baseline) << "first " << losses.front();
}
