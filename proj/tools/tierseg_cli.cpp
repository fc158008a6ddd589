// tierseg command-line front end: gen, split, train-cnn, train-rnn, eval,
// infer, baseline, overlay.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "tierseg/harness.hpp"

namespace fs = std::filesystem;
using namespace tierseg;

namespace {

struct DataArgs {
  std::string data;
  std::string split_file;
  double fraction = 0.8;
  std::uint64_t seed = 1;
};

void add_data_args(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--split", a.split_file, "Split file from `tierseg split` (default: split on the fly)");
  cmd->add_option("--fraction", a.fraction, "Training fraction when splitting on the fly");
  cmd->add_option("--seed", a.seed, "Master seed");
}

struct Loaded {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

Loaded load_split(const DataArgs& a) {
  Dataset ds = load_dataset(a.data);
  if (!ds.rejected.empty())
    std::cerr << "skipped " << ds.rejected.size() << " samples with missing ground truth\n";
  const Split s = a.split_file.empty() ? split_dataset(ds.samples.size(), a.fraction, derive_seed(a.seed, 0))
                                       : parse_split(read_text(a.split_file), ds.samples);
  return {select(ds.samples, s.train), select(ds.samples, s.test)};
}

void add_train_args(CLI::App* cmd, TrainConfig& tc) {
  cmd->add_option("--epochs", tc.epochs, "Training epochs");
  cmd->add_option("--batch", tc.batch, "Mini-batch size");
  cmd->add_option("--halve-every", tc.halve_every, "Halve the learning rate every N epochs (0: never)");
  cmd->add_option("--max-steps", tc.max_steps, "Stop after this many optimizer steps (0: no limit)");
}

void print_epoch(const char* stage, const EpochLog& e) {
  std::printf("%s epoch %zu lr %g loss %.6f\n", stage, e.epoch, e.lr, e.loss);
  std::fflush(stdout);
}

void print_summary(const char* name, const std::vector<EvalReport>& r) {
  const EvalSummary s = summarize(r);
  std::printf("%-20s n=%zu mae=%.4f layer_ap=%.4f\n", name, s.samples, s.mae, s.layer_ap);
}

Echogram read_image(const std::string& path, std::size_t h, std::size_t w) {
  return decode_image(read_text(path), h, w);
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Layer-boundary detection in layered echograms"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_out, gen_cfg;
  std::size_t gen_count = 100;
  SimConfig sim;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of samples");
  gen->add_option("--config", gen_cfg, "Simulator config file (key = value)");
  gen->add_option("--seed", sim.seed, "Master seed");
  gen->add_option("--height", sim.height, "Image height");
  gen->add_option("--width", sim.width, "Image width");
  gen->add_option("--min-layers", sim.min_layers, "Minimum layer count");
  gen->add_option("--max-layers", sim.max_layers, "Maximum layer count (<= 30)");
  gen->add_option("--noise", sim.noise, "Speckle noise level");

  // split
  auto* split = app.add_subcommand("split", "Write a train/test split file");
  DataArgs split_args;
  std::string split_out;
  split->add_option("--data", split_args.data, "Dataset directory")->required();
  split->add_option("--fraction", split_args.fraction, "Training fraction");
  split->add_option("--seed", split_args.seed, "Master seed");
  split->add_option("--out", split_out, "Output split file")->required();

  // train-cnn
  auto* train_cnn = app.add_subcommand("train-cnn", "Train the three-branch CNN");
  DataArgs cnn_data;
  TrainConfig cnn_tc;
  std::string cnn_model;
  Cnn3bConfig cnn_cfg;
  bool no_count = false;
  add_data_args(train_cnn, cnn_data);
  add_train_args(train_cnn, cnn_tc);
  train_cnn->add_option("--lr", cnn_tc.cnn_lr, "Initial learning rate");
  train_cnn->add_option("--model", cnn_model, "Model directory")->required();
  train_cnn->add_option("--height", cnn_cfg.height, "Model input height");
  train_cnn->add_option("--width", cnn_cfg.width, "Model input width");
  train_cnn->add_flag("--no-count-branch", no_count, "Train without the count branch");

  // train-rnn
  auto* train_rnn = app.add_subcommand("train-rnn", "Train the gap RNN on a frozen CNN");
  DataArgs rnn_data;
  TrainConfig rnn_tc;
  std::string rnn_model;
  std::size_t hidden = 128;
  add_data_args(train_rnn, rnn_data);
  add_train_args(train_rnn, rnn_tc);
  train_rnn->add_option("--lr", rnn_tc.rnn_lr, "Initial learning rate");
  train_rnn->add_option("--model", rnn_model, "Model directory holding the CNN")->required();
  train_rnn->add_option("--hidden", hidden, "GRU hidden size");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model on the test split");
  DataArgs eval_data;
  std::string eval_model, eval_out;
  bool eval_dp = false;
  DpConfig eval_dp_cfg;
  add_data_args(eval, eval_data);
  eval->add_option("--model", eval_model, "Model directory")->required();
  eval->add_option("--out", eval_out, "Directory for per-method CSV reports");
  eval->add_flag("--baseline", eval_dp, "Also run the sequential DP baseline");
  eval->add_option("--lambda", eval_dp_cfg.lambda, "DP smoothness weight");

  // infer
  auto* inf = app.add_subcommand("infer", "Run the model on one raw image");
  std::string inf_model, inf_image, inf_out, inf_overlay;
  std::size_t inf_h = 64, inf_w = 64;
  std::optional<std::size_t> inf_count;
  inf->add_option("--model", inf_model, "Model directory")->required();
  inf->add_option("--image", inf_image, "float32 little-endian image file")->required();
  inf->add_option("--height", inf_h, "Image height");
  inf->add_option("--width", inf_w, "Image width");
  inf->add_option("--count", inf_count, "Oracle layer count");
  inf->add_option("--out", inf_out, "Write boundaries here (.gt text format)");
  inf->add_option("--overlay", inf_overlay, "Write a PPM overlay here");

  // baseline
  auto* base = app.add_subcommand("baseline", "Run the sequential DP baseline with oracle counts");
  DataArgs base_data;
  DpConfig dp_cfg;
  std::string base_out;
  add_data_args(base, base_data);
  base->add_option("--lambda", dp_cfg.lambda, "Smoothness weight");
  base->add_option("--jump", dp_cfg.max_jump, "Truncation of the smoothness cost");
  base->add_option("--sep", dp_cfg.min_separation, "Minimum separation between boundaries");
  base->add_option("--half-width", dp_cfg.half_width, "Matched filter half-width");
  base->add_option("--out", base_out, "CSV report path");

  // overlay
  auto* ovl = app.add_subcommand("overlay", "Draw boundaries over an image");
  std::string ovl_image, ovl_gt, ovl_out;
  std::size_t ovl_h = 64, ovl_w = 64;
  ovl->add_option("--image", ovl_image, "float32 little-endian image file")->required();
  ovl->add_option("--boundaries", ovl_gt, "Boundary file (.gt text format)")->required();
  ovl->add_option("--height", ovl_h, "Image height");
  ovl->add_option("--width", ovl_w, "Image width");
  ovl->add_option("--out", ovl_out, "Output PPM")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      SimConfig c = sim;
      if (!gen_cfg.empty()) {
        c = SimConfig::from_kv(KeyValues::load(gen_cfg));
        // Explicit flags override the file.
        if (gen->count("--seed")) c.seed = sim.seed;
        if (gen->count("--height")) c.height = sim.height;
        if (gen->count("--width")) c.width = sim.width;
        if (gen->count("--min-layers")) c.min_layers = sim.min_layers;
        if (gen->count("--max-layers")) c.max_layers = sim.max_layers;
        if (gen->count("--noise")) c.noise = sim.noise;
      }
      make_dataset(c, gen_count, gen_out);
      std::printf("wrote %zu samples to %s\n", gen_count, gen_out.c_str());
    } else if (split->parsed()) {
      Dataset ds = load_dataset(split_args.data);
      const Split s = split_dataset(ds.samples.size(), split_args.fraction, derive_seed(split_args.seed, 0));
      write_text(split_out, split_text(ds.samples, s));
      std::printf("train %zu, test %zu\n", s.train.size(), s.test.size());
    } else if (train_cnn->parsed()) {
      cnn_tc.seed = cnn_data.seed;
      cnn_cfg.count_branch = !no_count;
      if (no_count) cnn_tc.weights.count = 0.0;
      Loaded d = load_split(cnn_data);
      CnnTraining r = train_cnn3b(d.train, cnn_cfg, cnn_tc, [](const EpochLog& e) { print_epoch("cnn", e); });
      save_cnn(cnn_model, r.params, cnn_cfg, r.stats);
      write_text(fs::path(cnn_model) / "cnn_loss.csv", loss_csv(r.log, true));
    } else if (train_rnn->parsed()) {
      rnn_tc.seed = rnn_data.seed;
      Model m = load_model(rnn_model, true);
      m.rnn_config = GruConfig::for_cnn(m.cnn_config, hidden);
      Loaded d = load_split(rnn_data);
      RnnTraining r = train_gaprnn(d.train, m.cnn, m.cnn_config, m.stats, m.rnn_config, rnn_tc,
                                   [](const EpochLog& e) { print_epoch("rnn", e); });
      if (r.skipped) std::printf("skipped %zu samples with no internal layers\n", r.skipped);
      save_rnn(rnn_model, r.params, m.rnn_config);
      write_text(fs::path(rnn_model) / "rnn_loss.csv", loss_csv(r.log, false));
    } else if (eval->parsed()) {
      Model m = load_model(eval_model);
      Loaded d = load_split(eval_data);
      Evaluation ev = evaluate(m, d.test, eval_dp, eval_dp_cfg);
      print_summary("cnn3b+rnn oracle", ev.rnn.oracle);
      print_summary("cnn3b+rnn predicted", ev.rnn.predicted);
      print_summary("cnn3b oracle", ev.cnn.oracle);
      print_summary("cnn3b predicted", ev.cnn.predicted);
      if (eval_dp) print_summary("sequential oracle", ev.dp);
      if (m.cnn_config.count_branch) std::printf("count accuracy %.4f\n", ev.count_accuracy());
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_text(fs::path(eval_out) / "rnn_oracle.csv", report_csv(ev.rnn.oracle));
        write_text(fs::path(eval_out) / "rnn_predicted.csv", report_csv(ev.rnn.predicted));
        write_text(fs::path(eval_out) / "cnn_oracle.csv", report_csv(ev.cnn.oracle));
        write_text(fs::path(eval_out) / "cnn_predicted.csv", report_csv(ev.cnn.predicted));
        if (eval_dp) write_text(fs::path(eval_out) / "dp_oracle.csv", report_csv(ev.dp));
      }
    } else if (inf->parsed()) {
      Model m = load_model(inf_model);
      Echogram img = read_image(inf_image, inf_h, inf_w);
      Inference r = infer(m, img, inf_count);
      std::printf("layers %zu (predicted %zu)\n", r.count, r.predicted_count);
      const std::string gt = encode_boundaries(r.boundaries);
      if (inf_out.empty())
        std::fputs(gt.c_str(), stdout);
      else
        write_text(inf_out, gt);
      if (!inf_overlay.empty()) export_overlay(img, r.boundaries, inf_overlay);
    } else if (base->parsed()) {
      Loaded d = load_split(base_data);
      std::vector<EvalReport> reports;
      for (const auto& s : d.test) {
        BoundaryMatrix found;
        try {
          found = sequential_track(s.image, s.gt.layer_count(), dp_cfg);
        } catch (const partial_track_error& e) {
          found = e.found();
        }
        reports.push_back(evaluate_sample(s.id, found, s.gt, scaled_thresholds(s.image.height)));
      }
      print_summary("sequential oracle", reports);
      if (!base_out.empty()) write_text(base_out, report_csv(reports));
    } else if (ovl->parsed()) {
      Echogram img = read_image(ovl_image, ovl_h, ovl_w);
      export_overlay(img, decode_boundaries(read_text(ovl_gt), ovl_w), ovl_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
