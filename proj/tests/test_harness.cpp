#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "tierseg/harness.hpp"

namespace fs = std::filesystem;
using tierseg::Cnn3bConfig;
using tierseg::Sample;
using tierseg::TrainConfig;

namespace {

std::vector<Sample> simulated(std::size_t n, double noise = 0.3, std::uint64_t seed = 1) {
  tierseg::SimConfig c;
  c.noise = noise;
  c.seed = seed;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = tierseg::simulate(c, i);
    out.push_back({tierseg::sample_id(i), std::move(s.image), std::move(s.boundaries)});
  }
  return out;
}

// A single noise-free sample with a few internal layers.
std::vector<Sample> overfit_sample() {
  tierseg::SimConfig c;
  c.noise = 0.0;
  c.min_layers = 3;
  c.max_layers = 5;
  auto s = tierseg::simulate(c, 0);
  return {{"a", std::move(s.image), std::move(s.boundaries)}};
}

TrainConfig one_sample_recipe(std::size_t steps) {
  TrainConfig tc;
  tc.batch = 1;
  tc.epochs = steps;
  tc.halve_every = 0;
  return tc;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("tierseg_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Shared across the RNN tests: a CNN trained once on the overfit sample.
const tierseg::CnnTraining& trained_cnn() {
  static const tierseg::CnnTraining r = tierseg::train_cnn3b(overfit_sample(), Cnn3bConfig{}, one_sample_recipe(200));
  return r;
}

}  // namespace

TEST(Split, EightTwo) {
  auto s = tierseg::split_dataset(10, 0.8, 4);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Split, DeterministicPartition) {
  auto a = tierseg::split_dataset(37, 0.8, 9), b = tierseg::split_dataset(37, 0.8, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (std::size_t i : a.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 37u);
  EXPECT_EQ(*all.rbegin(), 36u);
  EXPECT_NE(tierseg::split_dataset(37, 0.8, 10).train, a.train);
}

TEST(Split, Errors) {
  EXPECT_THROW(tierseg::split_dataset(0, 0.8, 1), tierseg::config_error);
  EXPECT_THROW(tierseg::split_dataset(5, 1.0, 1), tierseg::config_error);
}

TEST(Split, TextRoundTrip) {
  auto samples = simulated(6);
  auto s = tierseg::split_dataset(6, 0.5, 2);
  auto back = tierseg::parse_split(tierseg::split_text(samples, s), samples);
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.test, s.test);
  EXPECT_THROW(tierseg::parse_split("999999 train\n", samples), tierseg::config_error);
}

TEST(Schedule, HalvesEveryTenEpochs) {
  TrainConfig tc;
  EXPECT_EQ(tc.lr_at(tc.cnn_lr, 0), 1e-4);
  EXPECT_EQ(tc.lr_at(tc.cnn_lr, 9), 1e-4);
  EXPECT_EQ(tc.lr_at(tc.cnn_lr, 10), 5e-5);
  EXPECT_EQ(tc.lr_at(tc.cnn_lr, 20), 2.5e-5);
  EXPECT_EQ(tc.lr_at(tc.rnn_lr, 10), 5e-4);
}

TEST(TrainCnn, LogFollowsSchedule) {
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch = 2;
  tc.max_steps = 100;
  Cnn3bConfig c;
  c.height = c.width = 16;
  c.trunk_widths = {2, 2};
  c.branch_width = 2;
  c.branch_convs = 1;
  c.count_hidden = {4};
  auto r = tierseg::train_cnn3b(simulated(2), c, tc);
  ASSERT_EQ(r.log.size(), 12u);
  EXPECT_EQ(r.log[9].lr, 1e-4);
  EXPECT_EQ(r.log[10].lr, 5e-5);
  const std::string csv = tierseg::loss_csv(r.log, true);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
}

TEST(TrainCnn, SingleSampleOverfit) {
  const auto& r = trained_cnn();
  ASSERT_EQ(r.log.size(), 200u);
  EXPECT_LT(r.log.back().loss, 0.05 * r.log.front().loss);
}

TEST(TrainCnn, Deterministic) {
  auto tc = one_sample_recipe(15);
  auto a = tierseg::train_cnn3b(overfit_sample(), Cnn3bConfig{}, tc);
  auto b = tierseg::train_cnn3b(overfit_sample(), Cnn3bConfig{}, tc);
  EXPECT_TRUE(tierseg::nn::serialize_checkpoint(a.params) == tierseg::nn::serialize_checkpoint(b.params));
  tc.seed = 2;
  auto c = tierseg::train_cnn3b(overfit_sample(), Cnn3bConfig{}, tc);
  EXPECT_FALSE(tierseg::nn::serialize_checkpoint(a.params) == tierseg::nn::serialize_checkpoint(c.params));
}

TEST(TrainCnn, StatsComeFromTrainSplitOnly) {
  auto all = simulated(10);
  auto split = tierseg::split_dataset(all.size(), 0.8, 3);
  auto train = tierseg::select(all, split.train);
  TrainConfig tc;
  tc.epochs = 1;
  tc.max_steps = 1;
  Cnn3bConfig c;
  c.trunk_widths = {2};
  c.branch_width = 2;
  c.branch_convs = 1;
  c.count_hidden = {4};
  auto r = tierseg::train_cnn3b(train, c, tc);
  std::vector<tierseg::Echogram> train_images, all_images;
  for (const auto& s : train) train_images.push_back(s.image);
  for (const auto& s : all) all_images.push_back(s.image);
  const auto want = tierseg::fit_stats(train_images);
  EXPECT_EQ(r.stats.mean, want.mean);
  EXPECT_EQ(r.stats.std, want.std);
  EXPECT_NE(r.stats.mean, tierseg::fit_stats(all_images).mean);
}

TEST(TrainRnn, SingleSampleOverfitWithFrozenCnn) {
  auto cnn = trained_cnn();
  const std::string before = tierseg::nn::serialize_checkpoint(cnn.params);
  const Cnn3bConfig c;
  TrainConfig tc = one_sample_recipe(500);
  auto r = tierseg::train_gaprnn(overfit_sample(), cnn.params, c, cnn.stats, tierseg::GruConfig::for_cnn(c, 128), tc);
  EXPECT_TRUE(tierseg::nn::serialize_checkpoint(cnn.params) == before);
  ASSERT_EQ(r.log.size(), 500u);
  EXPECT_LT(r.log.back().loss, 0.05 * r.log.front().loss);
}

TEST(TrainRnn, DeterministicAndSkipsSurfaceOnly) {
  auto cnn = trained_cnn();
  const Cnn3bConfig c;
  auto data = overfit_sample();
  auto flat = data.front();
  flat.gt.rows.resize(1);
  data.push_back(flat);
  auto tc = one_sample_recipe(5);
  const auto gc = tierseg::GruConfig::for_cnn(c, 16);
  auto a = tierseg::train_gaprnn(data, cnn.params, c, cnn.stats, gc, tc);
  auto b = tierseg::train_gaprnn(data, cnn.params, c, cnn.stats, gc, tc);
  EXPECT_EQ(a.skipped, 1u);
  EXPECT_TRUE(tierseg::nn::serialize_checkpoint(a.params) == tierseg::nn::serialize_checkpoint(b.params));
}

TEST(ModelFiles, SaveLoadAndMissing) {
  const auto dir = scratch("model");
  EXPECT_THROW(tierseg::load_model(dir), tierseg::config_error);
  const auto& cnn = trained_cnn();
  const Cnn3bConfig c;
  tierseg::save_cnn(dir, cnn.params, c, cnn.stats);
  EXPECT_NO_THROW(tierseg::load_model(dir, true));
  EXPECT_THROW(tierseg::load_model(dir), tierseg::config_error);
  const auto gc = tierseg::GruConfig::for_cnn(c, 8);
  tierseg::save_rnn(dir, tierseg::init_gaprnn(gc, 1), gc);
  auto m = tierseg::load_model(dir);
  EXPECT_EQ(m.stats.mean, cnn.stats.mean);
  EXPECT_EQ(m.rnn_config.hidden, 8u);
  EXPECT_TRUE(tierseg::nn::serialize_checkpoint(m.cnn) == tierseg::nn::serialize_checkpoint(cnn.params));
  fs::remove_all(dir);
}

TEST(Evaluate, PerfectStubAndRowCount) {
  auto samples = simulated(7);
  std::vector<tierseg::EvalReport> reports;
  for (const auto& s : samples)
    reports.push_back(tierseg::evaluate_sample(s.id, s.gt, s.gt, tierseg::scaled_thresholds(64)));
  auto sum = tierseg::summarize(reports);
  EXPECT_EQ(sum.mae, 0.0);
  EXPECT_EQ(sum.layer_ap, 1.0);
  const std::string csv = tierseg::report_csv(reports);
  // header + one row per sample + summary
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7 + 2);
}

TEST(Evaluate, OracleModeDominatesPredicted) {
  // A briefly trained model gets some counts wrong.
  auto train = simulated(24, 0.3, 5);
  auto test = simulated(12, 0.3, 6);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 4;
  tc.cnn_lr = 1e-3;
  auto cnn = tierseg::train_cnn3b(train, Cnn3bConfig{}, tc);
  const Cnn3bConfig c;
  const auto gc = tierseg::GruConfig::for_cnn(c, 32);
  auto rnn = tierseg::train_gaprnn(train, cnn.params, c, cnn.stats, gc, tc);
  tierseg::Model m{c, cnn.params, gc, rnn.params, cnn.stats};
  auto ev = tierseg::evaluate(m, test, true);
  ASSERT_EQ(ev.rnn.oracle.size(), test.size());
  ASSERT_EQ(ev.dp.size(), test.size());
  ASSERT_LT(ev.count_accuracy(), 1.0);
  EXPECT_GE(tierseg::summarize(ev.rnn.oracle).layer_ap, tierseg::summarize(ev.rnn.predicted).layer_ap);
  EXPECT_GE(tierseg::summarize(ev.cnn.oracle).layer_ap, tierseg::summarize(ev.cnn.predicted).layer_ap);
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_EQ(ev.rnn.oracle[i].pred_layers, ev.true_counts[i]);
    EXPECT_EQ(ev.rnn.predicted[i].pred_layers, ev.predicted_counts[i]);
    // Identical rollouts: agreeing counts give identical reports.
    if (ev.true_counts[i] == ev.predicted_counts[i]) {
      EXPECT_EQ(ev.rnn.oracle[i].mae_pixels, ev.rnn.predicted[i].mae_pixels);
    }
  }
}

TEST(Overlay, ValidPpm) {
  auto s = simulated(1).front();
  const std::string ppm = tierseg::overlay_ppm(s.image, s.gt);
  std::istringstream is(ppm);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 64u);
  EXPECT_EQ(h, 64u);
  EXPECT_EQ(maxval, 255u);
  EXPECT_EQ(ppm.size() - static_cast<std::size_t>(is.tellg()), w * h * 3);

  const auto path = scratch("overlay") / "a.ppm";
  tierseg::export_overlay(s.image, s.gt, path);
  EXPECT_EQ(tierseg::read_text(path), ppm);
  EXPECT_EQ(tierseg::overlay_ppm(s.image, s.gt), ppm);
  fs::remove_all(path.parent_path());
}

TEST(Overlay, SurfaceOnlyIsOnePolyline) {
  tierseg::Echogram img(10, 6, 0.0);
  tierseg::BoundaryMatrix m{6, {{3, 3, 3, 4, 4, 4}}};
  const std::string ppm = tierseg::overlay_ppm(img, m);
  const std::size_t header = ppm.size() - 10 * 6 * 3;
  std::set<std::string> colours;
  std::size_t lit = 0;
  for (std::size_t i = header; i < ppm.size(); i += 3) {
    const std::string px = ppm.substr(i, 3);
    if (px != std::string(3, '\0')) {
      colours.insert(px);
      ++lit;
    }
  }
  EXPECT_EQ(colours.size(), 1u);
  EXPECT_EQ(lit, 7u);  // six columns plus the step at column 2
  EXPECT_THROW(tierseg::overlay_ppm(tierseg::Echogram(10, 5), m), tierseg::dimension_error);
}
