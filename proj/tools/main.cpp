#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drst/checkpoint.hpp"
#include "drst/clip.hpp"
#include "drst/config.hpp"
#include "drst/errors.hpp"
#include "drst/frp.hpp"
#include "drst/gradcheck.hpp"
#include "drst/synth.hpp"
#include "drst/trainer.hpp"

namespace fs = std::filesystem;
using namespace drst;

namespace {

// --config file first, then explicit flag overrides, then key=value pairs.
RunConfig resolve_config(const std::string& config_file,
                         const std::vector<std::pair<std::string, std::string>>& overrides,
                         const std::vector<std::string>& sets) {
  RunConfig cfg = config_file.empty() ? RunConfig{} : load_config(config_file);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  for (const std::string& s : sets) {
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ParameterError("--set wants key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

void print_eval(const EvalResult& r, bool multi) {
  std::printf("accuracy %.9g\n", r.accuracy);
  if (multi) {
    std::printf("capf %.9g\naddition %.9g\nmultiplication %.9g\n", r.accuracy, r.addition,
                r.multiplication);
  }
  std::printf("confusion rows=truth cols=prediction\n");
  for (int i = 0; i < r.classes; ++i) {
    for (int j = 0; j < r.classes; ++j)
      std::printf("%s%d", j ? " " : "", r.confusion[(std::size_t)i * r.classes + j]);
    std::printf("\n");
  }
}

int run(int argc, char** argv) {
  CLI::App app{"decoupled spatiotemporal rgb-d motion recognition"};
  app.require_subcommand(1);

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "render a synthetic clip store");
  SynthSpec spec;
  std::string synth_out;
  synth->add_option("--out", synth_out, "target directory")->required();
  synth->add_option("--classes", spec.classes, "number of motion classes");
  synth->add_option("--clips", spec.clips_per_class, "clips per class");
  synth->add_option("--frames", spec.frames, "frames per clip");
  synth->add_option("--side", spec.side, "square frame side");
  synth->add_option("--noise", spec.noise, "background noise amplitude");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_flag("--pairing", spec.pairing,
                  "4-class mode where rgb and depth carry complementary cues");

  // train / eval ----------------------------------------------------------
  std::string config_file, set_modality, set_data, set_eval_data, set_out;
  int set_epochs = -1;
  long long set_seed = -1;
  std::vector<std::string> sets;
  auto add_config_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "config file (key = value lines)");
    cmd->add_option("--modality", set_modality, "rgb, depth or rgbd");
    cmd->add_option("--epochs", set_epochs, "training epochs");
    cmd->add_option("--seed", set_seed, "run seed");
    cmd->add_option("--data", set_data, "training clip store");
    cmd->add_option("--eval-data", set_eval_data, "held-out clip store");
    cmd->add_option("--out", set_out, "output directory");
    cmd->add_option("--set", sets, "extra key=value override")->take_all();
  };
  auto* train = app.add_subcommand("train", "train a model from a clip store");
  add_config_flags(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config_flags(eval);
  std::string ckpt_file;
  eval->add_option("--checkpoint", ckpt_file, "checkpoint to evaluate")->required();

  // guidance ----------------------------------------------------------------
  auto* guide = app.add_subcommand("guidance", "dump guidance maps for one clip");
  std::string g_data, g_out, g_modality = "rgb";
  int g_clip = 0, g_grid = 0, g_span = 10, g_morph = 3;
  float g_lambda = 2.0f;
  guide->add_option("--data,--in", g_data, "clip store")->required();
  guide->add_option("--out", g_out, "target directory")->required();
  guide->add_option("--clip", g_clip, "clip index");
  guide->add_option("--modality", g_modality, "rgb or depth stream");
  guide->add_option("--grid", g_grid, "map side (default: half the frame)");
  guide->add_option("--span,--window", g_span, "sliding window span");
  guide->add_option("--morph-k,--k", g_morph, "opening structuring size");
  guide->add_option("--lambda", g_lambda, "dynamic guidance amplitude");

  // gradcheck ---------------------------------------------------------------
  auto* grad = app.add_subcommand("gradcheck", "finite-difference backward checks");
  std::string grad_module = "all";
  unsigned long long grad_seed = 1;
  grad->add_option("--module", grad_module, "all, primitives, dsn, rcm, dtn or capf");
  grad->add_option("--seed", grad_seed, "input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or help text
    return code == 0 ? 0 : 1;
  }

  if (synth->parsed()) {
    std::vector<Clip> clips = make_dataset(spec);
    save_clip_store(synth_out, clips);
    std::printf("wrote %zu clips (%d classes x %d) to %s\n", clips.size(), spec.classes,
                spec.clips_per_class, synth_out.c_str());
    return 0;
  }

  if (train->parsed() || eval->parsed()) {
    std::vector<std::pair<std::string, std::string>> ov;
    if (!set_modality.empty()) ov.emplace_back("modality", set_modality);
    if (set_epochs >= 0) ov.emplace_back("epochs", std::to_string(set_epochs));
    if (set_seed >= 0) ov.emplace_back("seed", std::to_string(set_seed));
    if (!set_data.empty()) ov.emplace_back("data", set_data);
    if (!set_eval_data.empty()) ov.emplace_back("eval_data", set_eval_data);
    if (!set_out.empty()) ov.emplace_back("out", set_out);
    RunConfig cfg = resolve_config(config_file, ov, sets);
    cfg.validate();
    if (cfg.data.empty()) throw ParameterError("no clip store given (data = ...)");
    std::vector<Clip> clips = load_clip_store(cfg.data);
    std::vector<Clip> eval_clips;
    if (!cfg.eval_data.empty()) eval_clips = load_clip_store(cfg.eval_data);

    if (train->parsed()) {
      TrainResult res = train_run(cfg, clips, eval_clips, cfg.out);
      std::printf("trained %d epochs, %zu steps\n", cfg.epochs, res.steps.size());
      std::printf("best accuracy %.9g at epoch %d\n", res.best_accuracy, res.best_epoch);
      std::printf("checkpoints: %s, %s\n", res.best_checkpoint.string().c_str(),
                  res.last_checkpoint.string().c_str());
      return 0;
    }

    const std::vector<Clip>& split = eval_clips.empty() ? clips : eval_clips;
    if (cfg.modality == "rgbd") {
      MultimodalModel m = build_multimodal(cfg);
      load_checkpoint(ckpt_file, m.params);
      print_eval(evaluate_multimodal(m, split, cfg.side, cfg.tau_end), true);
    } else {
      UnimodalModel m = build_unimodal(cfg);
      load_checkpoint(ckpt_file, m.params);
      print_eval(evaluate_unimodal(m, split, cfg.side, cfg.tau_end), false);
    }
    return 0;
  }

  if (guide->parsed()) {
    if (g_modality != "rgb" && g_modality != "depth")
      throw ParameterError("guidance modality must be rgb or depth");
    std::vector<Clip> clips = load_clip_store(g_data);
    if (g_clip < 0 || g_clip >= (int)clips.size())
      throw ParameterError("clip index out of range");
    const Clip& c = clips[(std::size_t)g_clip];
    const Tensor& stream = g_modality == "rgb" ? c.rgb : c.depth;
    const int side = g_grid > 0 ? g_grid : std::max(1, c.height() / 2);
    auto stacks = frp::compute_guidance(stream, g_span, g_morph, g_lambda, {{side, side}});
    fs::create_directories(g_out);
    const frp::GuidanceStack& st = stacks.front();
    for (std::size_t t = 0; t < st.maps.size(); ++t) {
      char name[40];
      std::snprintf(name, sizeof name, "guidance_%03zu.pgm", t);
      Tensor frame = reshape(st.maps[t], {1, 1, side, side});
      write_pgm(fs::path(g_out) / name, frame, 0);
    }
    std::printf("wrote %zu maps (span %d, first %d zero-filled) to %s\n", st.maps.size(),
                g_span, st.span, g_out.c_str());
    return 0;
  }

  if (grad->parsed()) {
    std::vector<GradCase> cases;
    if (grad_module == "all")
      cases = gradcheck_all(grad_seed);
    else if (grad_module == "primitives")
      cases = gradcheck_primitives(grad_seed);
    else
      cases = gradcheck_module(grad_module, grad_seed);
    double worst = 0.0;
    for (const GradCase& c : cases) {
      std::printf("%-20s %.3g\n", c.name.c_str(), c.max_rel_err);
      worst = std::max(worst, c.max_rel_err);
    }
    std::printf("max rel. error %.3g\n", worst);
    return worst < 1e-3 ? 0 : 1;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {  // parameter and dimension errors
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {  // anything unclassified counts as misuse
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
