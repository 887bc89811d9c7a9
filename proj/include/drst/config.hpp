#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drst/model.hpp"

namespace drst {

// Flat run configuration. File format: one `key = value` per line, `#` starts
// a comment, unknown keys are errors. Defaults follow the reference training
// recipe; the desk-scale test profile overrides them explicitly.
struct RunConfig {
  std::string modality = "rgbd";  // rgb | depth | rgbd
  int classes = 8;
  int frames = 64;
  int side = 224;  // network input side; stored clips are resized/cropped to it
  int d = 128;
  int dsn_layers = 6;
  float width_mult = 1.0f;
  int dtn_depth = 6;
  int heads = 4;
  int knn_k = 0;  // 0 keeps about half the keys
  int mlp_ratio = 2;
  std::vector<int> branch_lengths = {16, 32, 48};
  int window_span = 10;
  int morph_k = 3;
  float lambda = 2.0f;
  float distill_temp = 0.4f;
  bool rcm = true;
  float gamma = 0.5f;
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 3e-4f;
  float clip_norm = 1.0f;  // global grad-norm bound; 0 turns clipping off
  int warmup_epochs = 3;
  int epochs = 100;
  int batch = 8;
  unsigned long long seed = 1;
  float tau_start = 0.04f;
  float tau_end = 0.07f;
  std::string data;       // clip store to train on
  std::string eval_data;  // optional held-out store; empty re-evaluates `data`
  std::string out = "run";

  void set(const std::string& key, const std::string& value);  // one assignment
  void validate() const;
  ModelConfig to_model() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& file);
std::string serialize_config(const RunConfig& c);  // reparses to an equal config

}  // namespace drst
