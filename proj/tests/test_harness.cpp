#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "drst/augment.hpp"
#include "drst/checkpoint.hpp"
#include "drst/clip.hpp"
#include "drst/config.hpp"
#include "drst/synth.hpp"
#include "drst/trainer.hpp"

using namespace drst;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / ("drst_harness_" + leaf);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// intensity-weighted x center of one frame of channel 0
double com_x(const Tensor& planar, int t) {
  const int T = planar.dim(1), H = planar.dim(2), W = planar.dim(3);
  const float* d = planar.data() + (std::size_t)t * H * W;
  (void)T;
  double m = 0.0, mx = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      m += d[y * W + x];
      mx += d[y * W + x] * x;
    }
  return mx / m;
}

double frame_mass(const Tensor& planar, int t) {
  const int H = planar.dim(2), W = planar.dim(3);
  const float* d = planar.data() + (std::size_t)t * H * W;
  double m = 0.0;
  for (int i = 0; i < H * W; ++i) m += d[i];
  return m;
}

SynthSpec tiny_spec() {
  SynthSpec s;
  s.classes = 2;
  s.clips_per_class = 2;
  s.frames = 8;
  s.side = 16;
  s.noise = 0.02f;
  s.seed = 5;
  return s;
}

RunConfig tiny_config() {
  RunConfig c;
  c.modality = "rgb";
  c.classes = 2;
  c.frames = 8;
  c.side = 16;
  c.d = 8;
  c.dsn_layers = 2;
  c.dtn_depth = 1;
  c.heads = 2;
  c.mlp_ratio = 1;
  c.branch_lengths = {4};
  c.window_span = 1;
  c.morph_k = 1;
  c.warmup_epochs = 1;
  c.epochs = 2;
  c.batch = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("synthetic clips are pure functions of their key") {
  SynthSpec spec = tiny_spec();
  Clip a = make_clip(spec, 1, 0);
  Clip b = make_clip(spec, 1, 0);
  CHECK(a.rgb.values() == b.rgb.values());
  CHECK(a.depth.values() == b.depth.values());
  CHECK(a.rgb.shape() == Shape{3, 8, 16, 16});
  CHECK(a.depth.shape() == Shape{1, 8, 16, 16});
  for (float v : a.rgb.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  // different key, different pixels
  Clip c = make_clip(spec, 1, 1);
  CHECK(a.rgb.values() != c.rgb.values());

  auto ds = make_dataset(spec);
  REQUIRE(ds.size() == 4);
  CHECK(ds[0].label == 0);
  CHECK(ds[1].label == 0);
  CHECK(ds[2].label == 1);
  CHECK(ds[3].label == 1);
  CHECK(ds[2].rgb.values() == make_clip(spec, 1, 0).rgb.values());
}

TEST_CASE("motion classes move the way they are named") {
  SynthSpec spec;
  spec.classes = 8;
  spec.clips_per_class = 1;
  spec.frames = 8;
  spec.side = 16;
  spec.noise = 0.0f;
  spec.seed = 9;

  // left: the blob's center of mass drifts left
  Clip left = make_clip(spec, 0, 0);
  CHECK(com_x(left.rgb, 0) - com_x(left.rgb, 7) > 3.0);

  // grow: mass increases across the clip
  Clip grow = make_clip(spec, 4, 0);
  CHECK(frame_mass(grow.rgb, 7) > 2.0 * frame_mass(grow.rgb, 0));

  // blink: first and last frames identical, the middle third is dark
  Clip blink = make_clip(spec, 7, 0);
  const std::size_t plane = 16 * 16;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const float* base = blink.rgb.data() + (std::size_t)c * 8 * plane;
      CHECK(base[i] == base[7 * plane + i]);
    }
  CHECK(frame_mass(blink.rgb, 0) > 0.0);
  CHECK(frame_mass(blink.rgb, 3) == 0.0);

  CHECK_THROWS_AS(make_clip(spec, 8, 0), ParameterError);
  CHECK_THROWS_AS(make_clip(spec, -1, 0), ParameterError);
  CHECK_THROWS_AS(make_clip(spec, 0, -1), ParameterError);
}

TEST_CASE("generator limits") {
  SynthSpec s = tiny_spec();
  s.pairing = true;  // needs exactly 4 classes
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s.classes = 4;
  s.validate();
  Clip c = make_clip(s, 3, 0);
  CHECK(c.rgb.shape() == Shape{3, 8, 16, 16});

  s = tiny_spec();
  s.classes = 9;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = tiny_spec();
  s.classes = 1;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = tiny_spec();
  s.frames = 7;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = tiny_spec();
  s.side = 15;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = tiny_spec();
  s.noise = 1.5f;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = tiny_spec();
  s.clips_per_class = 0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
}

TEST_CASE("image files round trip on the 8-bit grid") {
  fs::path dir = scratch("img");
  fs::create_directories(dir);

  Tensor rgb = Tensor::zeros({3, 1, 2, 3});
  for (std::size_t i = 0; i < rgb.size(); ++i)
    rgb.data()[i] = (float)((i * 13) % 256) / 255.0f;
  write_ppm(dir / "f.ppm", rgb, 0);
  Tensor back = read_ppm(dir / "f.ppm");
  REQUIRE(back.shape() == Shape{3, 1, 2, 3});
  CHECK(back.values() == rgb.values());

  Tensor depth = Tensor::zeros({1, 2, 2, 2});
  for (std::size_t i = 0; i < depth.size(); ++i) depth.data()[i] = (float)i / 255.0f;
  write_pgm(dir / "f.pgm", depth, 1);
  Tensor dback = read_pgm(dir / "f.pgm");
  REQUIRE(dback.shape() == Shape{1, 1, 2, 2});
  const std::size_t plane = 4;
  for (std::size_t i = 0; i < plane; ++i)
    CHECK(dback.data()[i] == depth.data()[plane + i]);

  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), IoError);
  CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("clip stores reload in order") {
  SynthSpec spec = tiny_spec();
  auto clips = make_dataset(spec);
  fs::path dir = scratch("store");
  save_clip_store(dir, clips);
  auto loaded = load_clip_store(dir);
  REQUIRE(loaded.size() == clips.size());

  for (std::size_t i = 0; i < clips.size(); ++i) {
    CHECK(loaded[i].label == clips[i].label);
    REQUIRE(loaded[i].rgb.shape() == clips[i].rgb.shape());
    REQUIRE(loaded[i].depth.shape() == clips[i].depth.shape());
    // store quantizes to 8 bits
    for (std::size_t k = 0; k < clips[i].rgb.size(); ++k) {
      const float q = (float)std::lround(clips[i].rgb.data()[k] * 255.0f) / 255.0f;
      CHECK(loaded[i].rgb.data()[k] == q);
    }
  }

  // quantization is idempotent: a second round trip is bitwise stable
  fs::path dir2 = scratch("store2");
  save_clip_store(dir2, loaded);
  auto again = load_clip_store(dir2);
  REQUIRE(again.size() == loaded.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(again[i].rgb.values() == loaded[i].rgb.values());
    CHECK(again[i].depth.values() == loaded[i].depth.values());
  }

  CHECK_THROWS_AS(load_clip_store(scratch("nowhere")), IoError);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("config text round trips") {
  RunConfig c;
  const std::string s1 = serialize_config(c);
  RunConfig c2 = parse_config(s1);
  CHECK(serialize_config(c2) == s1);

  RunConfig c3 = parse_config(
      "# training profile\n"
      "modality = depth\n"
      "branch_lengths = 2, 4 ,8\n"
      "rcm = off\n"
      "gamma = 0.25 # inline comment\n"
      "\n"
      "seed = 42\n");
  CHECK(c3.modality == "depth");
  CHECK(c3.branch_lengths == std::vector<int>{2, 4, 8});
  CHECK(c3.rcm == false);
  CHECK(c3.gamma == 0.25f);
  CHECK(c3.seed == 42);
  CHECK(c3.classes == 8);  // untouched keys keep their defaults
  CHECK(serialize_config(parse_config(serialize_config(c3))) == serialize_config(c3));

  CHECK_THROWS_AS(parse_config("no_such_key = 3\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("classes = many\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("rcm = maybe\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("just a line\n"), ParameterError);
  CHECK_THROWS_AS(parse_config("branch_lengths =\n"), ParameterError);
  CHECK_THROWS_AS(load_config("definitely_missing.conf"), IoError);

  // model mapping carries every architecture field across
  RunConfig m = tiny_config();
  ModelConfig mc = m.to_model();
  CHECK(mc.classes == 2);
  CHECK(mc.frames == 8);
  CHECK(mc.d == 8);
  CHECK(mc.dsn_layers == 2);
  CHECK(mc.dtn.lengths == std::vector<int>{4});
  CHECK(mc.dtn.depth == 1);
  CHECK(mc.dtn.heads == 2);
  CHECK(mc.window_span == 1);
  CHECK(mc.morph_k == 1);
  CHECK(mc.recouple == true);

  RunConfig bad = tiny_config();
  bad.modality = "sonar";
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = tiny_config();
  bad.side = 2;  // smaller than 2^dsn_layers
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = tiny_config();
  bad.warmup_epochs = 2;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = tiny_config();
  bad.momentum = 1.0f;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = tiny_config();
  bad.gamma = 1.5f;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = tiny_config();
  bad.tau_end = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("augmentation plans and sampling") {
  CHECK(resize_side(56) == 64);
  CHECK(resize_side(7) == 8);
  CHECK(resize_side(16) == 18);

  ClipTransform ev = eval_transform(16);
  CHECK(ev.resize == 18);
  CHECK(ev.crop == 16);
  CHECK(ev.angle == 0.0f);
  CHECK(ev.off_y == 1);
  CHECK(ev.off_x == 1);

  Rng rng(33);
  const float max_angle = 15.0f * 3.14159265358979323846f / 180.0f;
  for (int i = 0; i < 200; ++i) {
    ClipTransform tr = train_transform(16, rng);
    CHECK(tr.off_y >= 0);
    CHECK(tr.off_y <= 2);
    CHECK(tr.off_x >= 0);
    CHECK(tr.off_x <= 2);
    CHECK(std::abs(tr.angle) <= max_angle);
  }

  // resize == crop == source side, no rotation: the identity
  Tensor src = Tensor::zeros({1, 1, 8, 8});
  for (std::size_t i = 0; i < src.size(); ++i) src.data()[i] = (float)i;
  ClipTransform ident{8, 8, 0.0f, 0, 0};
  CHECK(apply_transform(src, ident).values() == src.values());

  // pure crop: a window into the source
  ClipTransform win{8, 4, 0.0f, 2, 3};
  Tensor crop = apply_transform(src, win);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(crop.data()[y * 4 + x] == src.data()[(y + 2) * 8 + (x + 3)]);

  // quarter turn permutes the interior grid: out[y][x] = in[x][7-y]; border
  // samples sit within float epsilon of the square's edge and may drop out
  ClipTransform quarter{8, 8, 3.14159265358979323846f / 2.0f, 0, 0};
  Tensor rot = apply_transform(src, quarter);
  for (int y = 1; y < 7; ++y)
    for (int x = 1; x < 7; ++x)
      CHECK(rot.data()[y * 8 + x] == src.data()[x * 8 + (7 - y)]);

  // an eighth turn sweeps the corners outside the square; they read as zero
  ClipTransform eighth{8, 8, 3.14159265358979323846f / 4.0f, 0, 0};
  Tensor part = apply_transform(Tensor::full({1, 1, 8, 8}, 1.0f), eighth);
  CHECK(part.data()[0] == 0.0f);
  CHECK(part.data()[7] == 0.0f);
  CHECK(part.data()[3 * 8 + 3] == 1.0f);

  CHECK_THROWS_AS(apply_transform(Tensor::zeros({1, 8, 8}), ident), DimensionError);
  ClipTransform bad{4, 8, 0.0f, 0, 0};
  CHECK_THROWS_AS(apply_transform(src, bad), ParameterError);
  CHECK_THROWS_AS(train_transform(0, rng), ParameterError);
  CHECK_THROWS_AS(eval_transform(0), ParameterError);
}

TEST_CASE("schedules ramp, peak and decay") {
  RunConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch = 2;
  Schedules s = Schedules::make(cfg, 6);
  CHECK(s.steps_per_epoch == 3);
  CHECK(s.total_steps == 9);
  CHECK(s.warmup_steps == 3);

  // the schedule state holds the config floats widened to double, so exact
  // checks compare against those stored values, not double literals
  CHECK(s.lr(0) == doctest::Approx(s.peak_lr / 3.0).epsilon(1e-12));
  CHECK(s.lr(2) == s.peak_lr);  // linear ramp peaks on the last warmup step
  CHECK(s.lr(8) == 0.0);        // cosine tail lands exactly on zero
  for (int t = 3; t < 8; ++t) CHECK(s.lr(t) > s.lr(t + 1));
  CHECK(s.lr(3) < s.peak_lr);

  // sharpness runs its half cosine across all steps
  CHECK(s.tau(0) == s.tau_start);
  CHECK(s.tau(8) == s.tau_end);
  CHECK(s.tau(4) == doctest::Approx((s.tau_start + s.tau_end) / 2.0).epsilon(1e-12));
  for (int t = 0; t < 8; ++t) CHECK(s.tau(t) < s.tau(t + 1));

  CHECK_THROWS_AS(s.lr(-1), ParameterError);
  CHECK_THROWS_AS(s.lr(9), ParameterError);
  CHECK_THROWS_AS(s.tau(9), ParameterError);
  CHECK_THROWS_AS(Schedules::make(cfg, 0), ParameterError);

  // ragged last batch still counts as a step
  CHECK(Schedules::make(cfg, 5).steps_per_epoch == 3);
}

TEST_CASE("a tiny training run is reproducible") {
  RunConfig cfg = tiny_config();
  auto clips = make_dataset(tiny_spec());

  fs::path dir_a = scratch("run_a");
  TrainResult res = train_run(cfg, clips, {}, dir_a);
  REQUIRE(res.steps.size() == 4);  // 2 epochs x 2 steps
  REQUIRE(res.epochs.size() == 2);
  CHECK(fs::exists(dir_a / "config.txt"));
  CHECK(fs::exists(dir_a / "metrics.csv"));
  CHECK(fs::exists(dir_a / "eval.csv"));
  CHECK(fs::exists(res.best_checkpoint));
  CHECK(fs::exists(res.last_checkpoint));
  for (const StepRecord& st : res.steps) {
    CHECK(!st.terms.empty());
    CHECK(std::isfinite(st.total));
  }
  CHECK(res.best_epoch >= 0);

  // byte-identical logs on a rerun
  fs::path dir_b = scratch("run_b");
  train_run(cfg, clips, {}, dir_b);
  CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
  CHECK(slurp(dir_a / "eval.csv") == slurp(dir_b / "eval.csv"));
  CHECK(slurp(dir_a / "config.txt") == slurp(dir_b / "config.txt"));

  // the saved last checkpoint reproduces the final epoch's evaluation
  UnimodalModel fresh = build_unimodal(cfg);
  load_checkpoint(res.last_checkpoint, fresh.params);
  EvalResult ev = evaluate_unimodal(fresh, clips, cfg.side, cfg.tau_end);
  CHECK(ev.accuracy == res.epochs.back().accuracy);

  // the callback can stop training after any epoch
  fs::path dir_c = scratch("run_c");
  TrainResult stopped =
      train_run(cfg, clips, {}, dir_c, [](int, const TrainResult&) { return false; });
  CHECK(stopped.epochs.size() == 1);
  CHECK(stopped.steps.size() == 2);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}
