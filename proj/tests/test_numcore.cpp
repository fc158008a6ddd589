#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "tierseg/nn/adam.hpp"
#include "tierseg/nn/checkpoint.hpp"
#include "tierseg/nn/ops.hpp"

namespace nn = tierseg::nn;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using tierseg::Rng;
using tierseg::testing::gradcheck;
using tierseg::testing::probe;
using tierseg::testing::random_away_from_zero;
using tierseg::testing::random_tensor;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), tierseg::dimension_error);
  EXPECT_THROW(Tensor({2, 0}), tierseg::dimension_error);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.has_grad());
  t.set_requires_grad(true);
  EXPECT_EQ(t.grad().size(), 6u);
}

TEST(Conv2d, BoxSumOfOnes) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 3, 3}, 1.0));
  Var w = tape.constant(Tensor({1, 1, 3, 3}, 1.0));
  Var b = tape.constant(Tensor({1}, 0.0));
  Var y = nn::conv2d(x, w, b, 1);
  ASSERT_EQ(y.shape(), (nn::Shape{1, 3, 3}));
  auto v = y.value();
  EXPECT_DOUBLE_EQ(v[4], 9.0);
  EXPECT_DOUBLE_EQ(v[0], 4.0);
  EXPECT_DOUBLE_EQ(v[2], 4.0);
  EXPECT_DOUBLE_EQ(v[6], 4.0);
  EXPECT_DOUBLE_EQ(v[8], 4.0);
  EXPECT_DOUBLE_EQ(v[1], 6.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  Tensor in = random_tensor({1, 4, 5}, rng);
  Tape tape;
  Var y = nn::conv2d(tape.constant(in), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), tape.constant(Tensor({1})), 0);
  EXPECT_EQ(y.to_tensor(), in);
}

TEST(Conv2d, ShapeErrorsNameAxes) {
  Tape tape;
  Var x = tape.constant(Tensor({2, 5, 5}));
  Var b = tape.constant(Tensor({3}));
  try {
    nn::conv2d(x, tape.constant(Tensor({3, 1, 3, 3})), b, 1);
    FAIL() << "expected dimension_error";
  } catch (const tierseg::dimension_error& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
  EXPECT_THROW(nn::conv2d(x, tape.constant(Tensor({3, 2, 2, 2})), b, 1), tierseg::dimension_error);
  EXPECT_THROW(nn::conv2d(x, tape.constant(Tensor({3, 2, 3, 3})), tape.constant(Tensor({2})), 1),
               tierseg::dimension_error);
  EXPECT_THROW(nn::conv2d(tape.constant(Tensor({2, 1, 1})), tape.constant(Tensor({3, 2, 3, 3})), b, 0),
               tierseg::dimension_error);
}

TEST(Conv2d, FiniteDifferenceGradient) {
  Rng rng(11);
  const double err = gradcheck(
      [](Tape&, const std::vector<Var>& v) { return nn::sum(nn::conv2d(v[0], v[1], v[2], 1)); },
      {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  EXPECT_LT(err, 1e-6);
  const double err_unpadded = gradcheck(
      [](Tape&, const std::vector<Var>& v) { return probe(nn::conv2d(v[0], v[1], v[2], 0)); },
      {random_tensor({2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  EXPECT_LT(err_unpadded, 1e-6);
}

TEST(MaxPool, SingleWindowAndTies) {
  Tape tape;
  Var m = nn::maxpool2d(tape.constant(Tensor({1, 2, 2}, {1, 2, 3, 4})));
  EXPECT_DOUBLE_EQ(m.item(), 4.0);

  Tape tape2;
  Var x = tape2.variable(Tensor({1, 4, 4}, 2.0));
  Var y = nn::maxpool2d(x);
  for (double v : y.value()) EXPECT_DOUBLE_EQ(v, 2.0);
  tape2.backward(nn::sum(y));
  auto g = x.grad();
  const std::vector<double> expected{1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(g[i], expected[i]) << i;
}

TEST(MaxPool, OddDimensionRejected) {
  Tape tape;
  EXPECT_THROW(nn::maxpool2d(tape.constant(Tensor({1, 3, 4}))), tierseg::dimension_error);
  EXPECT_THROW(nn::maxpool2d(tape.constant(Tensor({1, 4, 5}))), tierseg::dimension_error);
}

TEST(MaxPool, FiniteDifferenceGradient) {
  Rng rng(5);
  const double err = gradcheck([](Tape&, const std::vector<Var>& v) { return probe(nn::maxpool2d(v[0])); },
                               {random_tensor({1, 4, 4}, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Affine, IdentityAndBias) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({1.5, -2.0}));
  Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var y = nn::affine(x, eye, tape.constant(Tensor({2})));
  EXPECT_EQ(y.to_tensor(), Tensor::vector({1.5, -2.0}));
  Var z = nn::affine(x, tape.constant(Tensor({2, 2})), tape.constant(Tensor::vector({1, 2})));
  EXPECT_EQ(z.to_tensor(), Tensor::vector({1, 2}));
  EXPECT_THROW(nn::affine(x, tape.constant(Tensor({2, 3})), tape.constant(Tensor({2}))), tierseg::dimension_error);
}

TEST(Affine, FiniteDifferenceGradient) {
  Rng rng(3);
  const double err = gradcheck(
      [](Tape&, const std::vector<Var>& v) { return probe(nn::affine(v[0], v[1], v[2])); },
      {random_tensor({4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Activations, FixedPoints) {
  Tape tape;
  EXPECT_DOUBLE_EQ(nn::sigmoid(tape.constant(Tensor::scalar(0.0))).item(), 0.5);
  EXPECT_DOUBLE_EQ(nn::tanh(tape.constant(Tensor::scalar(0.0))).item(), 0.0);
  EXPECT_DOUBLE_EQ(nn::relu(tape.constant(Tensor::scalar(-1.0))).item(), 0.0);
  EXPECT_THROW(nn::relu(tape.constant(Tensor::scalar(std::nan("")))), tierseg::numeric_error);
}

TEST(Activations, ReluSubgradientAtZero) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({0.0, 2.0}));
  tape.backward(nn::sum(nn::relu(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
}

TEST(Activations, FiniteDifferenceGradient) {
  Rng rng(9);
  for (auto op : {&nn::relu, &nn::sigmoid, &nn::tanh}) {
    const double err = gradcheck([op](Tape&, const std::vector<Var>& v) { return probe(op(v[0])); },
                                 {random_away_from_zero({16}, rng, 1e-4)});
    EXPECT_LT(err, 1e-6);
  }
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Tape tape;
  const double loss = nn::softmax_cross_entropy(tape.constant(Tensor({31}, 0.25)), 4).item();
  EXPECT_NEAR(loss, std::log(31.0), 1e-12);
  EXPECT_NEAR(loss, 3.4340, 5e-5);
}

TEST(SoftmaxCrossEntropy, SaturatedAndOutOfRange) {
  Tape tape;
  Tensor logits({5}, 0.0);
  logits[0] = 1000.0;
  EXPECT_NEAR(nn::softmax_cross_entropy(tape.constant(logits), 0).item(), 0.0, 1e-12);
  EXPECT_THROW(nn::softmax_cross_entropy(tape.constant(logits), 5), tierseg::index_error);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(21);
  Tensor logits = random_tensor({5}, rng, -2, 2);
  Tape tape;
  Var v = tape.variable(logits);
  tape.backward(nn::softmax_cross_entropy(v, 2));
  double z = 0.0;
  for (double l : logits.data()) z += std::exp(l);
  for (std::size_t j = 0; j < 5; ++j)
    EXPECT_NEAR(v.grad()[j], std::exp(logits[j]) / z - (j == 2 ? 1.0 : 0.0), 1e-12);
  const double err = gradcheck(
      [](Tape&, const std::vector<Var>& in) { return nn::softmax_cross_entropy(in[0], 2); }, {logits});
  EXPECT_LT(err, 1e-6);
}

TEST(L1Mean, HandValues) {
  Tape tape;
  Var a = tape.constant(Tensor::vector({3, 5}));
  EXPECT_DOUBLE_EQ(nn::l1_mean(a, a).item(), 0.0);
  EXPECT_DOUBLE_EQ(nn::l1_mean(a, tape.constant(Tensor::vector({1, 5}))).item(), 1.0);
  EXPECT_DOUBLE_EQ(nn::l1_mean(tape.constant(Tensor::scalar(2.5)), tape.constant(Tensor::scalar(4.0))).item(), 1.5);
  EXPECT_THROW(nn::l1_mean(a, tape.constant(Tensor::vector({1, 2, 3}))), tierseg::dimension_error);
}

TEST(L1Mean, TieSubgradientIsZero) {
  Tape tape;
  Var p = tape.variable(Tensor::vector({1.0, 2.0}));
  tape.backward(nn::l1_mean(p, tape.constant(Tensor::vector({1.0, 0.0}))));
  EXPECT_DOUBLE_EQ(p.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 0.5);
}

TEST(L1Mean, FiniteDifferenceGradient) {
  Rng rng(4);
  const double err = gradcheck([](Tape&, const std::vector<Var>& v) { return nn::l1_mean(v[0], v[1]); },
                               {random_tensor({6}, rng), random_tensor({6}, rng, 2.0, 3.0)});
  EXPECT_LT(err, 1e-6);
}

TEST(GlobalAvgPool, Values) {
  Tape tape;
  Var y = nn::global_avg_pool(tape.constant(Tensor({2, 2, 2}, {7, 7, 7, 7, 0, 2, 4, 6})));
  EXPECT_DOUBLE_EQ(y.value()[0], 7.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 3.0);
  Rng rng(8);
  const double err = gradcheck([](Tape&, const std::vector<Var>& v) { return probe(nn::global_avg_pool(v[0])); },
                               {random_tensor({3, 4, 2}, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Tape, FanOutAccumulates) {
  Rng rng(12);
  Tensor x0 = random_tensor({5}, rng);
  Tape single;
  Var x1 = single.variable(x0);
  single.backward(probe(nn::tanh(x1)));
  Tape twice;
  Var x2 = twice.variable(x0);
  twice.backward(nn::add(probe(nn::tanh(x2)), probe(nn::tanh(x2))));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x2.grad()[i], 2.0 * x1.grad()[i], 1e-15);
}

TEST(Tape, SingleBackwardOnly) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(1.0));
  Var y = nn::sigmoid(x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), tierseg::state_error);
}

TEST(Tape, ParameterGradientsLandOnTensor) {
  Tensor w({2}, 1.0);
  w.set_requires_grad(true);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    Var p = tape.parameter(w);
    tape.backward(nn::sum(nn::scale(p, 3.0)));
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Tape, ForwardIsBitwiseDeterministic) {
  Rng rng(13);
  Tensor in = random_tensor({2, 8, 8}, rng), w = random_tensor({4, 2, 3, 3}, rng), b = random_tensor({4}, rng);
  auto run = [&]() {
    Tape tape;
    return nn::maxpool2d(nn::relu(nn::conv2d(tape.constant(in), tape.constant(w), tape.constant(b), 1)))
        .to_tensor();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  nn::ParamSet params;
  params.add("w", Tensor::vector({1.0, -2.0}));
  nn::AdamState state;
  state.learning_rate = 0.1;
  nn::adam_step(params, state);
  EXPECT_EQ(params.at("w"), Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::ParamSet params;
  Tensor& w = params.add("w", Tensor::scalar(0.0));
  w.grad()[0] = 1.0;
  nn::AdamState state;
  state.learning_rate = 0.1;
  nn::adam_step(params, state);
  EXPECT_NEAR(w[0], -0.1, 1e-8);
}

TEST(Adam, DeterministicAndRequiresGradients) {
  auto make = [] {
    nn::ParamSet p;
    p.add("a", Tensor::vector({0.3, -0.7, 1.1}));
    return p;
  };
  nn::ParamSet p1 = make(), p2 = make();
  nn::AdamState s1, s2;
  for (int k = 0; k < 5; ++k) {
    for (auto* p : {&p1, &p2}) {
      auto g = p->at("a").grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::sin(static_cast<double>(k + i));
    }
    nn::adam_step(p1, s1);
    nn::adam_step(p2, s2);
  }
  EXPECT_EQ(p1, p2);

  nn::ParamSet frozen;
  frozen.add("f", Tensor::scalar(1.0)).set_requires_grad(false);
  nn::AdamState s3;
  EXPECT_THROW(nn::adam_step(frozen, s3), tierseg::state_error);
}

TEST(Checkpoint, RoundTripPreservesBits) {
  Rng rng(99);
  nn::ParamSet params;
  params.add("conv.w", random_tensor({2, 1, 3, 3}, rng));
  params.add("fc.b", Tensor::vector({0.1, -0.0, 1e-300}));
  const std::string bytes = nn::serialize_checkpoint(params);
  EXPECT_EQ(bytes.rfind("tierseg-checkpoint 1\nparams 2\nconv.w 4 2 1 3 3\nfc.b 1 3\ndata\n", 0), 0u);
  nn::ParamSet back = nn::parse_checkpoint(bytes);
  EXPECT_EQ(back, params);
  EXPECT_THROW(nn::parse_checkpoint(bytes.substr(0, bytes.size() - 3)), tierseg::storage_error);

  const auto path = std::filesystem::temp_directory_path() / "tierseg_ckpt_test.bin";
  nn::save_checkpoint(params, path);
  EXPECT_EQ(nn::load_checkpoint(path), params);
  std::filesystem::remove(path);
}
