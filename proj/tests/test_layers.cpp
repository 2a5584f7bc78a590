#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "partrain/errors.hpp"
#include "partrain/layers.hpp"
#include "partrain/network.hpp"
#include "support/oracle.hpp"

using namespace partrain;
using oracle::random_tensor;

namespace {

ResolvedLayer resolved(LayerKind kind, Shape3 in) {
  NetworkDescription d{"probe", in, 2, {kind}};
  // Wrap the layer in the smallest valid network to get its resolved shapes.
  if (!std::holds_alternative<layer::SoftmaxXent>(kind)) {
    d.layers.push_back(layer::Dense{2});
    d.layers.push_back(layer::SoftmaxXent{});
  } else {
    d.layers = {layer::Dense{2}, layer::SoftmaxXent{}};
    return NetworkSpec(d).layer(1);
  }
  return NetworkSpec(d).layer(0);
}

ParamBlock<double> block_for(const ResolvedLayer& l, std::mt19937_64& gen) {
  const ParamShape s = param_shape(l);
  return {random_tensor(s.weights, gen), random_tensor(s.bias, gen, -0.5, 0.5),
          Tensor<double>(s.weights), Tensor<double>(s.bias)};
}

Tensor<double> batch_of(std::size_t n, Shape3 s, std::mt19937_64& gen, double lo = -1,
                        double hi = 1) {
  return random_tensor({n, s.height, s.width, s.channels}, gen, lo, hi);
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (long double)a[i] * b[i];
  return static_cast<double>(acc);
}

}  // namespace

TEST(Layers, ReluForward) {
  Rng rng(1);
  const ResolvedLayer l = resolved(layer::ReLU{}, {1, 1, 3});
  const Tensor<double> x({1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
  const Tensor<double> y = forward<double>(l, nullptr, x, Mode::eval, rng);
  EXPECT_EQ(y.values()[0], 0.0);
  EXPECT_EQ(y.values()[1], 0.0);
  EXPECT_EQ(y.values()[2], 2.0);
}

TEST(Layers, ReluBackwardZeroAtNegative) {
  Rng rng(1);
  const ResolvedLayer l = resolved(layer::ReLU{}, {1, 1, 2});
  LayerCache<double> cache;
  const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{-1, 2});
  forward<double>(l, nullptr, x, Mode::train, rng, &cache);
  const Tensor<double> up({1, 1, 1, 2}, std::vector<double>{1, 1});
  const LayerGradients<double> g = backward<double>(l, nullptr, cache, up);
  EXPECT_EQ(g.input[0], 0.0);
  EXPECT_EQ(g.input[1], 1.0);
}

TEST(Layers, DenseDotProduct) {
  Rng rng(1);
  const ResolvedLayer l = resolved(layer::Dense{1}, {1, 1, 2});
  ParamBlock<double> p{Tensor<double>({2, 1}, std::vector<double>{0.5, 0.5}),
                       Tensor<double>({1}, std::vector<double>{0.0}),
                       Tensor<double>({2, 1}), Tensor<double>({1})};
  const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{2, 4});
  const Tensor<double> y = forward<double>(l, &p, x, Mode::eval, rng);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 3.0);
}

TEST(Layers, DenseWeightGradIsOuterProduct) {
  std::mt19937_64 gen(3);
  Rng rng(1);
  const ResolvedLayer l = resolved(layer::Dense{4}, {1, 1, 3});
  ParamBlock<double> p = block_for(l, gen);
  const Tensor<double> x = batch_of(1, {1, 1, 3}, gen);
  const Tensor<double> up = random_tensor({1, 1, 1, 4}, gen);
  LayerCache<double> cache;
  forward<double>(l, &p, x, Mode::train, rng, &cache);
  const LayerGradients<double> g = backward<double>(l, &p, cache, up);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 4; ++o) EXPECT_DOUBLE_EQ(g.weights[i * 4 + o], x[i] * up[o]);
}

TEST(Layers, LenetShapeChain) {
  const NetworkSpec spec = lenet_spec();
  ASSERT_EQ(spec.layers().size(), 11u);
  EXPECT_EQ(spec.layer(0).out, (Shape3{24, 24, 20}));
  EXPECT_EQ(spec.layer(2).out, (Shape3{12, 12, 20}));
  EXPECT_EQ(spec.layer(3).out, (Shape3{8, 8, 50}));
  EXPECT_EQ(spec.layer(5).out, (Shape3{4, 4, 50}));
  EXPECT_EQ(spec.layer(6).in.size(), 800u);
}

TEST(Layers, ConvOneToOneShapes) {
  NetworkDescription d{"c", {28, 28, 1}, 2,
                       {layer::Conv2D{1, 5, 5}, layer::MaxPool{2, 2}, layer::Dense{2},
                        layer::SoftmaxXent{}}};
  const NetworkSpec spec(d);
  EXPECT_EQ(spec.layer(0).out, (Shape3{24, 24, 1}));
  EXPECT_EQ(spec.layer(1).out, (Shape3{12, 12, 1}));
}

TEST(Layers, ForwardMatchesReferenceLoops) {
  std::mt19937_64 gen(11);
  Rng rng(1);
  const Shape3 in{7, 6, 3};
  const Tensor<double> x = batch_of(2, in, gen);

  const ResolvedLayer conv = resolved(layer::Conv2D{4, 3, 2}, in);
  ParamBlock<double> cp = block_for(conv, gen);
  const Tensor<double> yc = forward<double>(conv, &cp, x, Mode::eval, rng);
  const Tensor<double> rc = oracle::conv(x, cp.weights, cp.bias);
  ASSERT_EQ(yc.shape(), rc.shape());
  for (std::size_t i = 0; i < yc.size(); ++i) EXPECT_NEAR(yc[i], rc[i], 1e-12);

  const ResolvedLayer dense = resolved(layer::Dense{5}, in);
  ParamBlock<double> dp = block_for(dense, gen);
  const Tensor<double> yd = forward<double>(dense, &dp, x, Mode::eval, rng);
  const Tensor<double> rd = oracle::dense(x, dp.weights, dp.bias);
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yd[i], rd[i], 1e-12);

  const ResolvedLayer pool = resolved(layer::MaxPool{2, 2}, in);
  const Tensor<double> yp = forward<double>(pool, nullptr, x, Mode::eval, rng);
  const Tensor<double> rp = oracle::maxpool(x, 2, 2);
  ASSERT_EQ(yp.shape(), rp.shape());
  for (std::size_t i = 0; i < yp.size(); ++i) EXPECT_EQ(yp[i], rp[i]);

  const layer::Lrn attrs{2, 2.0, 0.3, 0.75, 1};
  const ResolvedLayer lrn = resolved(attrs, in);
  const Tensor<double> yl = forward<double>(lrn, nullptr, x, Mode::eval, rng);
  const Tensor<double> rl = oracle::lrn(x, 2, 2.0, 0.3, 0.75);
  for (std::size_t i = 0; i < yl.size(); ++i) EXPECT_NEAR(yl[i], rl[i], 1e-14);
}

TEST(Lrn, AlphaZeroKOneIsIdentity) {
  std::mt19937_64 gen(5);
  const Tensor<double> x = random_tensor({2, 3, 3, 6}, gen);
  for (double beta : {0.25, 0.75, 2.0}) {
    const Tensor<double> y = lrn_forward(x, layer::Lrn{2, 1.0, 0.0, beta, 1});
    EXPECT_EQ(y, x);
  }
}

TEST(Lrn, ZeroKRejected) {
  const Tensor<double> x({1, 1, 1, 1}, 1.0);
  EXPECT_THROW(lrn_forward(x, layer::Lrn{2, 0.0, 1e-4, 0.75, 1}), SpecError);
}

TEST(Lrn, SingleChannelScalar) {
  const Tensor<double> x({1, 1, 1, 1}, std::vector<double>{2.0});
  const Tensor<double> y = lrn_forward(x, layer::Lrn{2, 2.0, 1e-4, 0.75, 1});
  const double expected = 2.0 / std::pow(2.0 + 1e-4 * 4.0, 0.75);
  EXPECT_NEAR(y[0], expected, 1e-15);
}

TEST(Lrn, GroupsClipWindows) {
  std::mt19937_64 gen(8);
  const Tensor<double> x = random_tensor({1, 2, 2, 7}, gen);
  const Tensor<double> y = lrn_forward(x, layer::Lrn{3, 1.5, 0.5, 0.75, 3});
  const Tensor<double> r = oracle::lrn(x, 3, 1.5, 0.5, 0.75, 3);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], r[i], 1e-14);
}

TEST(SoftmaxXent, UniformLogits) {
  const std::vector<double> z(10, 0.7);
  const auto r = softmax_xent<double>(z, 3);
  for (double p : r.probs) EXPECT_NEAR(p, 0.1, 1e-15);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-14);
}

TEST(SoftmaxXent, ShiftInvariant) {
  const std::vector<double> z{0.3, -1.2, 2.5, 0.0};
  std::vector<double> shifted = z;
  for (double& v : shifted) v += 123.25;
  const auto a = softmax_xent<double>(z, 1);
  const auto b = softmax_xent<double>(shifted, 1);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-15);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
}

TEST(SoftmaxXent, MatchesHighPrecisionOracle) {
  const std::vector<double> z{1, 2, 3};
  const auto r = softmax_xent<double>(z, 2);
  const oracle::XentResult o = oracle::softmax_xent(z, 2);
  EXPECT_NEAR(r.loss, static_cast<double>(o.loss), 1e-15);
  for (std::size_t i = 0; i < 3; ++i) {
    const long double target = o.probs[i] - (i == 2 ? 1.0L : 0.0L);
    EXPECT_NEAR(r.logit_grad[i], static_cast<double>(target), 1e-15);
  }
}

TEST(SoftmaxXent, BadLabelThrows) {
  const std::vector<double> z{1, 2};
  EXPECT_THROW(softmax_xent<double>(z, 2), Error);
}

TEST(Dropout, EvalIsIdentityAndTrainPreservesMean) {
  std::mt19937_64 gen(2);
  const ResolvedLayer l = resolved(layer::Dropout{0.5}, {1, 1, 20000});
  const Tensor<double> x({1, 1, 1, 20000}, 1.0);
  Rng rng(9);
  EXPECT_EQ(forward<double>(l, nullptr, x, Mode::eval, rng), x);
  const Tensor<double> y = forward<double>(l, nullptr, x, Mode::train, rng);
  double sum = 0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ASSERT_TRUE(y[i] == 0.0 || y[i] == 2.0);
    sum += y[i];
    kept += y[i] != 0.0;
  }
  // Mean of 20000 values 0 or 2 with p = 0.5: stddev of the mean is 1/sqrt(20000).
  EXPECT_NEAR(sum / 20000.0, 1.0, 3.0 / std::sqrt(20000.0));
  EXPECT_GT(kept, 0u);
}

TEST(Layers, BackwardBeforeForwardThrows) {
  const ResolvedLayer l = resolved(layer::ReLU{}, {1, 1, 2});
  LayerCache<double> cache;
  EXPECT_THROW(backward<double>(l, nullptr, cache, Tensor<double>({1, 1, 1, 2})), Error);
}

TEST(Layers, NonFiniteInputRaises) {
  Rng rng(1);
  const ResolvedLayer l = resolved(layer::ReLU{}, {1, 1, 2});
  const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{NAN, 1});
  EXPECT_THROW(forward<double>(l, nullptr, x, Mode::eval, rng), NumericError);
}

// Every layer kind against central finite differences of L = <r, layer(x)>.
class LayerGradient : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradient, MatchesFiniteDifferences) {
  const int kind = GetParam();
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 gen(1000 * kind + trial);
    std::uniform_int_distribution<std::size_t> dim(3, 8);
    Shape3 in{dim(gen) % 4 + 2, dim(gen) % 4 + 2, dim(gen)};
    LayerKind k;
    switch (kind) {
      case 0: k = layer::Dense{dim(gen)}; break;
      case 1: k = layer::Conv2D{dim(gen), 2, 2}; break;
      case 2: k = layer::MaxPool{2, 2}; break;
      case 3: k = layer::ReLU{}; break;
      case 4: k = layer::Dropout{0.4}; break;
      case 5: k = layer::Lrn{2, 1.5, 0.4, 0.75, static_cast<std::size_t>(trial % 2 + 1)}; break;
      default: k = layer::SoftmaxXent{}; in = Shape3{1, 1, 2}; break;
    }
    const ResolvedLayer l = resolved(k, in);
    const bool params = has_params(k);
    ParamBlock<double> p;
    if (params) p = block_for(l, gen);
    Tensor<double> x = batch_of(2, l.in, gen);
    const Tensor<double> r = random_tensor({2, l.out.height, l.out.width, l.out.channels}, gen);
    const Rng stream(trial + 77);

    const auto objective = [&] {
      Rng s = stream;
      return dot(r, forward<double>(l, params ? &p : nullptr, x, Mode::train, s));
    };
    Rng s = stream;
    LayerCache<double> cache;
    forward<double>(l, params ? &p : nullptr, x, Mode::train, s, &cache);
    const LayerGradients<double> g = backward<double>(l, params ? &p : nullptr, cache, r);

    for (std::size_t i = 0; i < x.size(); ++i) {
      const double n = oracle::central_difference(objective, &x[i]);
      EXPECT_LT(oracle::rel_error(g.input[i], n), oracle::kFdTolerance)
          << kind_name(k) << " input " << i << " analytic " << g.input[i] << " numeric " << n;
    }
    if (params) {
      for (std::size_t i = 0; i < p.weights.size(); ++i) {
        const double n = oracle::central_difference(objective, &p.weights[i]);
        EXPECT_LT(oracle::rel_error(g.weights[i], n), oracle::kFdTolerance);
      }
      for (std::size_t i = 0; i < p.bias.size(); ++i) {
        const double n = oracle::central_difference(objective, &p.bias[i]);
        EXPECT_LT(oracle::rel_error(g.bias[i], n), oracle::kFdTolerance);
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerGradient, ::testing::Range(0, 7));

TEST(Network, LossGradientMatchesFiniteDifferences) {
  NetworkDescription d{"small", {6, 6, 2}, 3,
                       {layer::Conv2D{4, 3, 3}, layer::ReLU{}, layer::Lrn{1, 2.0, 0.2, 0.75, 1},
                        layer::MaxPool{2, 2}, layer::Dense{5}, layer::ReLU{},
                        layer::Dropout{0.3}, layer::Dense{3}, layer::SoftmaxXent{}}};
  const NetworkSpec spec(d);
  Network<double> net(spec);
  Rng init(4);
  ParameterStore<double> params = ParameterStore<double>::glorot(spec, init);
  std::mt19937_64 gen(6);
  for (auto& b : params.blocks()) b.bias = random_tensor(b.bias.shape(), gen, -0.2, 0.2);
  const Tensor<double> x = batch_of(3, spec.input(), gen, 0, 1);
  const std::vector<std::uint16_t> labels{0, 2, 1};
  const Rng stream(12);

  Gradients<double> grads;
  Rng s = stream;
  net.train_batch(params, x, labels, s, grads);
  const auto objective = [&] {
    Rng t = stream;
    return net.loss(params, x, labels, Mode::train, t);
  };
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& blk = params.block(b);
    for (std::size_t i = 0; i < blk.weights.size(); ++i) {
      const double n = oracle::central_difference(objective, &blk.weights[i]);
      EXPECT_LT(oracle::rel_error(grads.weights[b][i], n), oracle::kFdTolerance)
          << "block " << b << " weight " << i;
    }
    for (std::size_t i = 0; i < blk.bias.size(); ++i) {
      const double n = oracle::central_difference(objective, &blk.bias[i]);
      EXPECT_LT(oracle::rel_error(grads.bias[b][i], n), oracle::kFdTolerance);
    }
  }
}

TEST(Network, EvalLogitsDeterministicAndPrecisionClose) {
  const NetworkSpec spec = lenet_spec(4, 6, 12);
  Rng init(2);
  const ParameterStore<double> p64 = ParameterStore<double>::glorot(spec, init);
  const ParameterStore<float> p32 = p64.cast<float>();
  std::mt19937_64 gen(1);
  const Tensor<double> x = batch_of(2, spec.input(), gen, 0, 1);
  Network<double> n64(spec);
  Network<float> n32(spec);
  const Tensor<double> a = n64.logits(p64, x);
  const Tensor<double> b = n64.logits(p64, x);
  EXPECT_EQ(a, b);
  const Tensor<float> c = n32.logits(p32, x.cast<float>());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-4);
}

TEST(Layers, BiasGradientIsRowOrderSum) {
  // Exact equality with a sequential float sum keeps training reproducible
  // regardless of how the buffers happen to be aligned.
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 4; ++trial) {
    const ResolvedLayer l = resolved(layer::Dense{37}, {1, 1, 5});
    const ParamShape s = param_shape(l);
    ParamBlock<float> p{Tensor<float>(s.weights, 0.1f), Tensor<float>(s.bias),
                        Tensor<float>(s.weights), Tensor<float>(s.bias)};
    const std::size_t n = 61 + trial;
    Tensor<float> x({n, 1, 1, 5}, 0.5f);
    Tensor<float> dy({n, 1, 1, 37});
    std::uniform_real_distribution<float> u(-1, 1);
    for (float& v : dy.values()) v = u(gen);
    Rng rng(1);
    LayerCache<float> cache;
    forward<float>(l, &p, x, Mode::train, rng, &cache);
    const auto g = backward<float>(l, &p, cache, dy);
    for (std::size_t c = 0; c < 37; ++c) {
      float sum = 0;
      for (std::size_t r = 0; r < n; ++r) sum += dy[r * 37 + c];
      EXPECT_EQ(g.bias[c], sum) << c;
    }
  }
}
