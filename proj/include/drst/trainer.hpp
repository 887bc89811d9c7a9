#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "drst/clip.hpp"
#include "drst/config.hpp"
#include "drst/model.hpp"

namespace drst {

// Step-indexed learning-rate and sharpness schedules. lr ramps linearly to its
// peak over the warmup steps (hitting the peak exactly on the last of them),
// then follows a half cosine down to exactly zero at the final step. tau runs
// a half cosine from tau_start to tau_end across all steps.
struct Schedules {
  int steps_per_epoch = 0;
  int total_steps = 0;
  int warmup_steps = 0;
  double peak_lr = 0.01;
  double tau_start = 0.04;
  double tau_end = 0.07;

  static Schedules make(const RunConfig& c, int train_clips);
  double lr(int step) const;
  double tau(int step) const;
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double tau = 0.0;
  std::vector<std::pair<std::string, double>> terms;  // batch means
  double total = 0.0;
  double accuracy = 0.0;  // over this batch, from the training forward
};

struct EpochRecord {
  int epoch = 0;
  double accuracy = 0.0;  // eval split; CAPF fusion when multimodal
  double addition = 0.0;
  double multiplication = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  double best_accuracy = 0.0;
  int best_epoch = -1;
};

struct EvalResult {
  double accuracy = 0.0;  // CAPF fusion when multimodal
  double addition = 0.0;
  double multiplication = 0.0;
  int classes = 0;
  std::vector<int> confusion;  // classes x classes, row = true class
};

UnimodalModel build_unimodal(const RunConfig& cfg);
MultimodalModel build_multimodal(const RunConfig& cfg);

EvalResult evaluate_unimodal(const UnimodalModel& m, const std::vector<Clip>& clips,
                             int input_side, float tau);
EvalResult evaluate_multimodal(const MultimodalModel& m, const std::vector<Clip>& clips,
                               int input_side, float tau);

// Returning false from the callback ends training after that epoch (the
// acceptance experiments cap their budget this way; the CLI never stops early).
using EpochCallback = std::function<bool(int epoch, const TrainResult& so_far)>;

// Full run: minibatch SGD with the schedules above, per-epoch center-crop
// evaluation on eval_clips (train clips when empty), metrics.csv / eval.csv /
// config.txt / best.drst / last.drst under out_dir.
TrainResult train_run(const RunConfig& cfg, const std::vector<Clip>& train_clips,
                      const std::vector<Clip>& eval_clips,
                      const std::filesystem::path& out_dir, const EpochCallback& cb = {});

}  // namespace drst
