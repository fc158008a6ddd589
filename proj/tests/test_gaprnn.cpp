#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tierseg/gaprnn.hpp"

namespace nn = tierseg::nn;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using tierseg::GruConfig;
using tierseg::Rng;
using tierseg::testing::gradcheck;
using tierseg::testing::probe;
using tierseg::testing::random_tensor;

namespace {

GruConfig small_config() { return {4, 6, 3, 4}; }

struct Inputs {
  Tensor avg_f;
  Tensor shared;
};

Inputs random_inputs(const GruConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  return {random_tensor({c.input_size}, rng), random_tensor({c.pooled_size, 2, 2}, rng)};
}

}  // namespace

TEST(GruCell, ZeroWeightsHandExample) {
  Tape t;
  auto zero = [&](nn::Shape s) { return t.constant(Tensor(s, 0.0)); };
  tierseg::GruWeights g{zero({1, 1}), zero({1, 1}), zero({1}), zero({1, 1}), zero({1, 1}),
                        zero({1}),    zero({1, 1}), zero({1, 1}), zero({1})};
  Var h = tierseg::gru_cell(t.constant(Tensor::vector({1.0})), t.constant(Tensor::vector({0.0})), g);
  EXPECT_DOUBLE_EQ(h.item(), 0.5);
}

TEST(GruCell, SaturatedUpdateGateCarriesState) {
  Tape t;
  Rng rng(1);
  auto rnd = [&](nn::Shape s) { return t.constant(random_tensor(s, rng)); };
  tierseg::GruWeights g{rnd({3, 3}), rnd({3, 3}), t.constant(Tensor({3}, -50.0)), rnd({3, 3}), rnd({3, 3}),
                        rnd({3}),    rnd({3, 3}), rnd({3, 3}), rnd({3})};
  Tensor h0 = Tensor::vector({0.3, -0.7, 0.1});
  Var h = tierseg::gru_cell(t.constant(h0), t.constant(Tensor({3}, 0.0)), g);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(h.value()[i], h0[i], 1e-15);
}

TEST(GruCell, DimensionMismatch) {
  Tape t;
  auto c = [&](nn::Shape s) { return t.constant(Tensor(s, 0.1)); };
  tierseg::GruWeights g{c({2, 2}), c({2, 2}), c({2}), c({2, 2}), c({2, 2}), c({2}), c({2, 2}), c({2, 2}), c({2})};
  EXPECT_THROW(tierseg::gru_cell(c({3}), c({2}), g), tierseg::dimension_error);
}

TEST(GruCell, FiniteDifferenceAllInputs) {
  Rng rng(2);
  std::vector<Tensor> in;
  in.push_back(random_tensor({4}, rng));  // h
  in.push_back(random_tensor({4}, rng));  // x
  for (int k = 0; k < 3; ++k) {
    in.push_back(random_tensor({4, 4}, rng));
    in.push_back(random_tensor({4, 4}, rng));
    in.push_back(random_tensor({4}, rng));
  }
  const double err = gradcheck(
      [](Tape&, const std::vector<Var>& v) {
        tierseg::GruWeights g{v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
        return probe(tierseg::gru_cell(v[0], v[1], g), 3);
      },
      in);
  EXPECT_LT(err, 1e-4);
}

TEST(Rollout, ZeroStepsIsEmpty) {
  auto c = small_config();
  auto p = tierseg::init_gaprnn(c, 1);
  auto in = random_inputs(c, 2);
  Tape t;
  auto pred = tierseg::rollout(t, p, c, t.constant(in.avg_f), t.constant(in.shared), 0);
  EXPECT_EQ(pred.steps(), 0u);
}

TEST(Rollout, DeterministicAndPrefixConsistent) {
  auto c = small_config();
  auto p = tierseg::init_gaprnn(c, 3);
  auto in = random_inputs(c, 4);
  auto run = [&](std::size_t n) {
    Tape t;
    return tierseg::rollout(t, p, c, t.constant(in.avg_f), t.constant(in.shared), n).values();
  };
  auto five = run(5);
  ASSERT_EQ(five.size(), 5u);
  EXPECT_EQ(five, run(5));
  auto three = run(3), two = run(2);
  EXPECT_EQ(three[0], two[0]);
  EXPECT_EQ(three[1], two[1]);
  EXPECT_EQ(five[2], three[2]);
}

TEST(GapLoss, HandExampleAndZero) {
  Tape t;
  tierseg::GapPrediction pred{{t.constant(Tensor::vector({2.0, 4.0}))}};
  EXPECT_DOUBLE_EQ(tierseg::gap_loss(t, pred, {{1.0, 4.0}}).item(), 0.5);
  EXPECT_DOUBLE_EQ(tierseg::gap_loss(t, pred, {{2.0, 4.0}}).item(), 0.0);
  tierseg::GapPrediction swapped{{t.constant(Tensor::vector({4.0, 2.0}))}};
  EXPECT_DOUBLE_EQ(tierseg::gap_loss(t, swapped, {{4.0, 1.0}}).item(), 0.5);
}

TEST(GapLoss, ZeroLayersUndefined) {
  Tape t;
  EXPECT_THROW(tierseg::gap_loss(t, {}, {}), tierseg::undefined_loss_error);
}

TEST(GapLoss, RolloutGradientMatchesFiniteDifference) {
  auto c = small_config();
  auto p = tierseg::init_gaprnn(c, 5);
  auto in = random_inputs(c, 6);
  const std::vector<std::vector<double>> gt{{0.1, 0.2, 0.3, 0.4}, {0.5, -0.1, 0.2, 0.0}, {0.3, 0.3, 0.3, 0.3}};
  const double err = tierseg::testing::gradcheck_params(p, [&](Tape& t) {
    auto pred = tierseg::rollout(t, p, c, t.constant(in.avg_f), t.constant(in.shared), 3);
    return tierseg::gap_loss(t, pred, gt);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Compose, WorkedExample) {
  // Normalized inputs whose pixel values at H=21 are F=[5,5,5], gaps 2 and 3.
  const std::size_t h = 21;
  auto nr = [&](double r) { return tierseg::normalize_row(r, h); };
  auto ng = [&](double g) { return tierseg::normalize_gap(g, h); };
  auto m = tierseg::compose_boundaries({nr(5), nr(5), nr(5)}, {{ng(2), ng(2), ng(2)}, {ng(3), ng(3), ng(3)}}, 2, h);
  const std::vector<std::vector<double>> want{{5, 5, 5}, {7, 7, 7}, {10, 10, 10}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t w = 0; w < 3; ++w) EXPECT_NEAR(m.rows[i][w], want[i][w], 1e-12);
  auto surface_only = tierseg::compose_boundaries({nr(5), nr(6), nr(7)}, {}, 0, h);
  ASSERT_EQ(surface_only.rows.size(), 1u);
  EXPECT_NEAR(surface_only.rows[0][2], 7.0, 1e-12);
}

TEST(Compose, PositiveGapsNeverCross) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 64, w = 1 + rng.below(16), n = rng.below(10);
    std::vector<double> surface(w);
    for (double& v : surface) v = rng.uniform(-1.0, -0.5);
    std::vector<std::vector<double>> gaps(n, std::vector<double>(w));
    for (auto& row : gaps)
      for (double& v : row) v = rng.uniform(1e-3, 0.1);
    auto pix = tierseg::compose_pixels(surface, gaps, n, h);
    ASSERT_TRUE(tierseg::is_non_crossing(pix));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < w; ++c)
        ASSERT_NEAR(pix.rows[i + 1][c] - pix.rows[i][c], tierseg::denormalize_gap(gaps[i][c], h), 1e-12);
  }
}

TEST(Compose, ClipsOnlyAtOutput) {
  const std::size_t h = 11;
  auto m = tierseg::compose_boundaries({0.0}, {{1.0}, {1.0}}, 2, h);
  EXPECT_DOUBLE_EQ(m.rows[1][0], 10.0);
  EXPECT_DOUBLE_EQ(m.rows[2][0], 10.0);
  auto raw = tierseg::compose_pixels({0.0}, {{1.0}, {1.0}}, 2, h);
  EXPECT_DOUBLE_EQ(raw.rows[2][0], 15.0);
}

TEST(Infer, OracleCountPaths) {
  tierseg::Cnn3bConfig cc;
  cc.height = cc.width = 16;
  cc.trunk_widths = {2, 2};
  cc.branch_width = 2;
  cc.branch_convs = 1;
  cc.count_hidden = {4};
  tierseg::Model model{cc, tierseg::init_cnn3b(cc, 1), tierseg::GruConfig::for_cnn(cc, 4), {}, {0.3, 0.2}};
  model.rnn = tierseg::init_gaprnn(model.rnn_config, 2);
  tierseg::Echogram img(16, 16);
  Rng rng(3);
  for (double& v : img.pixels) v = rng.uniform();

  auto none = tierseg::infer(model, img, 0);
  ASSERT_EQ(none.boundaries.rows.size(), 1u);
  auto pred = tierseg::infer(model, img);
  auto oracle = tierseg::infer(model, img, pred.predicted_count);
  EXPECT_EQ(pred.boundaries, oracle.boundaries);
  EXPECT_EQ(pred.count, pred.predicted_count);
  EXPECT_EQ(none.boundaries.rows[0], pred.boundaries.rows[0]);

  tierseg::Echogram big = tierseg::resize_bicubic(img, 31, 20);
  auto mapped = tierseg::infer(model, big, 2);
  EXPECT_EQ(mapped.boundaries.width, 20u);
  EXPECT_EQ(mapped.boundaries.rows.size(), 3u);
}
