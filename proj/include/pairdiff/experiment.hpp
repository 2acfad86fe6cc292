#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairdiff/diffusion.hpp"

namespace pairdiff::experiment {

enum class Encoding { Bits, OneHot };

/// How a training set is assembled from the real corpus: resampled synthetic
/// pairs, a classic augmentation applied R times per real pair, or nothing.
enum class Plan { Synthetic, None, Cutout, CutMix, CopyPaste };

std::string plan_name(Plan p);
Plan parse_plan(const std::string& s);

/// Strict key=value experiment settings; unknown keys are rejected. echo()
/// emits the canonical text (registry order), which parses back identically.
struct ExperimentConfig {
  std::string out_dir;
  uint64_t seed = 42;
  std::string scene_spec;  // path to a scene spec; empty uses the built-in scene
  int data_train = 50;
  int data_val = 200;

  int diff_t = 200;
  int diff_steps = 2000;
  int diff_batch = 8;
  double diff_lr = 2e-4;
  int diff_base_width = 32;
  int diff_depth = 1;
  int diff_time_dim = 32;
  double diff_ema = 0.999;
  Encoding encoding = Encoding::Bits;
  diffusion::PredictionMode predict = diffusion::PredictionMode::Epsilon;

  int sr_steps = 800;
  int sr_batch = 8;
  double sr_lr = 2e-4;
  int sr_base_width = 24;
  int sr_depth = 1;
  int sr_time_dim = 32;

  int sample_count = 500;

  int augset_r = 2;
  bool augset_balance = true;
  Plan augset_plan = Plan::Synthetic;

  int seg_base_width = 32;
  int seg_depth = 3;
  int seg_epochs = 10;
  int seg_batch = 8;
  double seg_lr = 1e-3;

  std::vector<int> sweep_r_grid = {0, 1, 2, 3, 4, 5};
  int sweep_seeds = 5;
  bool sweep_balance = true;
  std::vector<Plan> sweep_plans = {Plan::Synthetic};

  void validate() const;
  std::string echo() const;
};

ExperimentConfig parse_experiment_config(const std::string& text);

/// Reads the file, applies key=value overrides on top, validates.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides);

const std::vector<std::string>& subcommand_names();

/// Runs one pipeline stage against the config's artifact directory. Missing
/// upstream artifacts raise MissingArtifactError naming the producing
/// subcommand; outputs are deterministic, wall times go to the manifest only.
void run_subcommand(const std::string& name, const ExperimentConfig& cfg);

// --- sweep CSV and SVG report ----------------------------------------------

struct SweepPoint {
  int r = 0;
  double mean = 0.0;
  double se = 0.0;
};

struct SweepSeries {
  std::string plan;
  std::vector<SweepPoint> points;  // aggregate rows, in file order
};

/// Parses a ratio-sweep CSV (header kind,plan,r,seed,miou,se) and returns
/// one series per plan. Any malformed line raises FormatError naming the
/// 1-based line number.
std::vector<SweepSeries> parse_sweep_csv(const std::string& text);

/// Deterministic SVG: x = R in [0, 5], y = mIoU in [0, 1], one polyline per
/// multi-point series, circle markers, vertical SE error bars. An empty
/// series list renders axes only.
std::string render_sweep_svg(const std::vector<SweepSeries>& series);

}  // namespace pairdiff::experiment
