#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "spkmoco/encoder.hpp"
#include "spkmoco/errors.hpp"
#include "spkmoco/head.hpp"
#include "spkmoco/objectives.hpp"
#include "test_util.hpp"

using namespace spkmoco;
using spkmoco::testing::random_features;
using spkmoco::testing::random_tensor;

namespace {

EncoderConfig small_config(std::size_t input_dim = 6) {
  EncoderConfig c;
  c.input_dim = input_dim;
  c.frame_dims = {16, 16, 16, 16, 24};
  c.embed_a_dim = 12;
  c.embed_b_dim = 10;
  return c;
}

// Fixture shared with the golden-vector generator.
FeatureMatrix golden_utterance() {
  Rng rng(7);
  return random_features(60, 30, rng);
}

EncoderConfig golden_config() {
  EncoderConfig c = small_config(30);
  c.frame_dims = {32, 32, 32, 32, 64};
  c.embed_a_dim = 32;
  c.embed_b_dim = 16;
  return c;
}

}  // namespace

TEST(Encoder, ContextsAndReceptiveField) {
  EXPECT_EQ(receptive_field(), 15u);
  EXPECT_EQ(frame_contexts()[0], (std::vector<int>{-2, -1, 0, 1, 2}));
  EXPECT_EQ(frame_contexts()[1], (std::vector<int>{-2, 0, 2}));
  EXPECT_EQ(frame_contexts()[2], (std::vector<int>{-3, 0, 3}));
  EXPECT_EQ(frame_contexts()[3], (std::vector<int>{0}));
}

TEST(Encoder, DefaultShapes) {
  Rng rng(1);
  const auto s = init_encoder(EncoderConfig{}, rng);
  EXPECT_EQ(s.params.at("frame1.affine.weight").value.shape(), (Shape{512, 150}));
  EXPECT_EQ(s.params.at("frame2.affine.weight").value.shape(), (Shape{512, 1536}));
  EXPECT_EQ(s.params.at("frame3.affine.weight").value.shape(), (Shape{512, 1536}));
  EXPECT_EQ(s.params.at("frame4.affine.weight").value.shape(), (Shape{512, 512}));
  EXPECT_EQ(s.params.at("frame5.affine.weight").value.shape(), (Shape{1500, 512}));
  EXPECT_EQ(s.params.at("embed_a.affine.weight").value.shape(), (Shape{512, 3000}));
  EXPECT_EQ(s.params.at("embed_b.affine.weight").value.shape(), (Shape{512, 512}));
  EXPECT_FALSE(s.params.contains("embed_b.bn.gamma"));
  EXPECT_FALSE(s.params.at("frame1.bn.running_mean").trainable);
}

TEST(Encoder, FrameCountArithmetic) {
  Rng rng(2);
  auto s = init_encoder(small_config(), rng);
  for (auto [t, expect] : {std::pair{15u, 1u}, std::pair{100u, 86u}}) {
    Graph g;
    const auto out = encode_eval(g, s, random_tensor({2 * t, 6}, rng), 2);
    EXPECT_EQ(out.frames.shape(), (Shape{2 * expect, 24}));
    EXPECT_EQ(out.pooled.shape(), (Shape{2, 48}));
    EXPECT_EQ(out.embedding.shape(), (Shape{2, 10}));
  }
  Graph g;
  EXPECT_THROW(encode_eval(g, s, random_tensor({14, 6}, rng), 1), DataError);
}

TEST(Encoder, ZeroWeightsPropagateBnShift) {
  Rng rng(3);
  auto s = init_encoder(small_config(), rng);
  for (auto& [name, p] : s.params)
    if (name.ends_with("affine.weight")) p.value.fill(0.0);
  s.params.at("frame5.affine.bias").value.fill(0.7);
  Tensor beta({24});
  for (std::size_t i = 0; i < 24; ++i) beta[i] = 0.1 * double(i);
  s.params.at("frame5.bn.beta").value = beta;
  Graph g;
  ForwardOptions opt;
  opt.train = true;
  const auto out = encode(g, s, random_tensor({40, 6}, rng), 2, opt);
  for (std::size_t r = 0; r < out.frames.value().rows(); ++r)
    for (std::size_t c = 0; c < 24; ++c) EXPECT_NEAR(out.frames.value().at(r, c), beta[c], 1e-12);
}

TEST(Encoder, ReceptiveFieldSensitivity) {
  Rng rng(4);
  const auto s = init_encoder(small_config(), rng);
  const std::size_t t_count = 40, t_out = t_count - 14;
  const Tensor x = random_tensor({t_count, 6}, rng);
  Graph g0;
  const Tensor base = encode_eval(g0, s, x, 1).frames.value();
  for (std::size_t t = 0; t < t_count; ++t) {
    Tensor p = x;
    for (std::size_t j = 0; j < 6; ++j) p.at(t, j) += 0.5;
    Graph g;
    const Tensor y = encode_eval(g, s, p, 1).frames.value();
    for (std::size_t u = 0; u < t_out; ++u) {
      bool changed = false;
      for (std::size_t c = 0; c < 24; ++c) changed |= y.at(u, c) != base.at(u, c);
      const bool inside = t >= u && t <= u + 14;
      EXPECT_EQ(changed, inside) << "input " << t << " output " << u;
    }
  }
}

TEST(Encoder, EvalDeterministicAndConst) {
  Rng rng(5);
  const auto s = init_encoder(small_config(), rng);
  const auto f = random_features(50, 6, rng);
  const auto before = s.params.at("frame1.bn.running_mean").value;
  const auto a = extract_embedding(s, f, "u1"), b = extract_embedding(s, f, "u1");
  EXPECT_EQ(a.vector, b.vector);
  EXPECT_EQ(a.utterance_id, "u1");
  EXPECT_EQ(a.vector.size(), 10u);
  EXPECT_EQ(s.params.at("frame1.bn.running_mean").value, before);
}

TEST(Encoder, TimeReversalValidShape) {
  Rng rng(6);
  const auto s = init_encoder(small_config(), rng);
  const auto f = random_features(30, 6, rng);
  FeatureMatrix r = f;
  for (std::size_t t = 0; t < 30; ++t)
    for (std::size_t j = 0; j < 6; ++j) r.at(t, j) = f.at(29 - t, j);
  const auto e = extract_embedding(s, r);
  EXPECT_EQ(e.vector.size(), 10u);
  for (double v : e.vector) EXPECT_TRUE(std::isfinite(v));
}

TEST(Encoder, EmbeddingIsEmbedBAffineOutput) {
  Rng rng(7);
  const auto s = init_encoder(small_config(), rng);
  const auto f = random_features(30, 6, rng);
  Graph g;
  const auto out = encode_eval(g, s, f.to_tensor(), 1);
  const Tensor& a = out.embed_a.value();
  const Tensor& W = s.params.at("embed_b.affine.weight").value;
  const Tensor& b = s.params.at("embed_b.affine.bias").value;
  const Tensor expect = spkmoco::testing::naive_affine(a, W, b);
  const auto e = extract_embedding(s, f);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(e.vector[i], expect[i]);
}

TEST(Encoder, DropoutOnlyInTrainMode) {
  Rng rng(8);
  auto s = init_encoder(small_config(), rng);
  const Tensor x = random_tensor({60, 6}, rng);
  ForwardOptions opt;
  opt.train = true;
  opt.update_running_stats = false;
  Graph g1, g2;
  const auto plain = encode(g1, s, x, 2, opt).embedding.value();
  Rng drop(3);
  opt.dropout_p = 0.5;
  opt.rng = &drop;
  const auto dropped = encode(g2, s, x, 2, opt).embedding.value();
  EXPECT_NE(plain, dropped);
}

TEST(Encoder, GoldenEmbedding) {
  Rng rng(2024);
  const auto s = init_encoder(golden_config(), rng);
  const auto e = extract_embedding(s, golden_utterance());
  std::ifstream in(std::string(SPKMOCO_FIXTURE_DIR) + "/golden_embedding.txt");
  ASSERT_TRUE(in) << "missing fixture";
  std::vector<double> golden;
  for (double v; in >> v;) golden.push_back(v);
  ASSERT_EQ(golden.size(), e.vector.size());
  for (std::size_t i = 0; i < golden.size(); ++i) EXPECT_NEAR(e.vector[i], golden[i], 1e-10);
}

TEST(Head, CeZeroWeightsGiveLogThree) {
  Rng rng(9);
  HeadConfig hc;
  hc.kind = HeadKind::ce;
  hc.num_classes = 3;
  hc.embed_dim = 10;
  auto head = init_head(hc, rng);
  head.at("affine.weight").value.fill(0.0);
  Graph g;
  const std::vector<int> labels{0, 1, 2, 1};
  const auto logits = classifier_logits(g, head, hc, g.constant(random_tensor({4, 10}, rng)), labels, true);
  EXPECT_NEAR(cross_entropy(logits, labels).value()[0], std::log(3.0), 1e-15);
}

TEST(Head, TooFewClasses) {
  Rng rng(10);
  HeadConfig hc;
  hc.num_classes = 1;
  EXPECT_THROW(init_head(hc, rng), ParameterError);
}

TEST(Head, SwitchingModeLeavesEncoderUntouched) {
  Rng rng(11);
  auto s = init_encoder(small_config(), rng);
  const ParameterSet before = s.params;
  const auto f = random_features(40, 6, rng);
  const std::vector<int> labels{0, 1};
  for (HeadKind kind : {HeadKind::ce, HeadKind::aam}) {
    HeadConfig hc;
    hc.kind = kind;
    hc.num_classes = 4;
    hc.embed_dim = 10;
    auto head = init_head(hc, rng);
    Graph g;
    ForwardOptions opt;
    opt.train = false;
    const auto out = encode(g, s, stack_batch(std::vector<FeatureMatrix>{f.slice(0, 20), f.slice(20, 20)}), 2, opt);
    classifier_logits(g, head, hc, out.embedding, labels, false);
    for (const auto& [name, p] : head) EXPECT_FALSE(s.params.contains(name)) << name;
  }
  for (const auto& [name, p] : before) EXPECT_EQ(s.params.at(name).value, p.value) << name;
}
