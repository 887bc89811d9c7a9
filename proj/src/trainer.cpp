#include "drst/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "drst/augment.hpp"
#include "drst/checkpoint.hpp"
#include "drst/errors.hpp"
#include "drst/fusion.hpp"

namespace drst {

namespace fs = std::filesystem;

Schedules Schedules::make(const RunConfig& c, int train_clips) {
  if (train_clips < 1) throw ParameterError("training needs at least one clip");
  Schedules s;
  s.steps_per_epoch = (train_clips + c.batch - 1) / c.batch;
  s.total_steps = s.steps_per_epoch * c.epochs;
  s.warmup_steps = s.steps_per_epoch * c.warmup_epochs;
  s.peak_lr = c.lr;
  s.tau_start = c.tau_start;
  s.tau_end = c.tau_end;
  return s;
}

double Schedules::lr(int step) const {
  if (step < 0 || step >= total_steps) throw ParameterError("lr step out of range");
  if (step < warmup_steps) return peak_lr * (double)(step + 1) / (double)warmup_steps;
  // continues just under the peak and lands on exactly zero at the last step
  return cosine_value(step - warmup_steps + 1, total_steps - warmup_steps, peak_lr, 0.0);
}

double Schedules::tau(int step) const {
  if (step < 0 || step >= total_steps) throw ParameterError("tau step out of range");
  if (total_steps == 1) return tau_end;
  return cosine_value(step, total_steps - 1, tau_start, tau_end);
}

UnimodalModel build_unimodal(const RunConfig& cfg) {
  cfg.validate();
  UnimodalModel m;
  m.init(cfg.to_model(), cfg.modality, mix_seed(cfg.seed, 1));
  return m;
}

MultimodalModel build_multimodal(const RunConfig& cfg) {
  cfg.validate();
  MultimodalModel m;
  m.init(cfg.to_model(), mix_seed(cfg.seed, 1));
  return m;
}

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

void check_clips(const std::vector<Clip>& clips, int frames, int classes,
                 const char* which) {
  for (const Clip& c : clips) {
    if (c.frames() != frames)
      throw ParameterError(std::string(which) + " clip has " + std::to_string(c.frames()) +
                           " frames, config wants " + std::to_string(frames));
    if (c.label < 0 || c.label >= classes)
      throw ParameterError(std::string(which) + " clip label " + std::to_string(c.label) +
                           " outside the configured " + std::to_string(classes) + " classes");
  }
}

void bump_confusion(EvalResult& r, int truth, int pred) {
  r.confusion[(std::size_t)truth * r.classes + pred]++;
}

}  // namespace

EvalResult evaluate_unimodal(const UnimodalModel& m, const std::vector<Clip>& clips,
                             int input_side, float tau) {
  if (clips.empty()) throw ParameterError("evaluation needs at least one clip");
  check_clips(clips, m.cfg.frames, m.cfg.classes, "eval");
  NoGradGuard ng;
  EvalResult r;
  r.classes = m.cfg.classes;
  r.confusion.assign((std::size_t)r.classes * r.classes, 0);
  const ClipTransform t = eval_transform(input_side);
  int hit = 0;
  for (const Clip& c : clips) {
    Tensor stream = apply_transform(m.modality == "rgb" ? c.rgb : c.depth, t);
    UnimodalOut out = m.forward(stream, tau, nullptr);
    const int pred = argmax_class(out.agg.teacher);
    bump_confusion(r, c.label, pred);
    hit += pred == c.label;
  }
  r.accuracy = (double)hit / (double)clips.size();
  return r;
}

EvalResult evaluate_multimodal(const MultimodalModel& m, const std::vector<Clip>& clips,
                               int input_side, float tau) {
  if (clips.empty()) throw ParameterError("evaluation needs at least one clip");
  check_clips(clips, m.cfg.frames, m.cfg.classes, "eval");
  NoGradGuard ng;
  EvalResult r;
  r.classes = m.cfg.classes;
  r.confusion.assign((std::size_t)r.classes * r.classes, 0);
  const ClipTransform t = eval_transform(input_side);
  int hit = 0, hit_add = 0, hit_mul = 0;
  for (const Clip& c : clips) {
    MultimodalOut out = m.forward(apply_transform(c.rgb, t), apply_transform(c.depth, t),
                                  tau, nullptr);
    const int pred = argmax_class(out.fused);
    const int pred_add = argmax_class(add(out.logits_rgb, out.logits_depth));
    const int pred_mul = argmax_class(mul(out.logits_rgb, out.logits_depth));
    bump_confusion(r, c.label, pred);
    hit += pred == c.label;
    hit_add += pred_add == c.label;
    hit_mul += pred_mul == c.label;
  }
  r.accuracy = (double)hit / (double)clips.size();
  r.addition = (double)hit_add / (double)clips.size();
  r.multiplication = (double)hit_mul / (double)clips.size();
  return r;
}

TrainResult train_run(const RunConfig& cfg, const std::vector<Clip>& train_clips,
                      const std::vector<Clip>& eval_clips, const fs::path& out_dir,
                      const EpochCallback& cb) {
  cfg.validate();
  check_clips(train_clips, cfg.frames, cfg.classes, "train");
  if (!eval_clips.empty()) check_clips(eval_clips, cfg.frames, cfg.classes, "eval");
  const std::vector<Clip>& eval_set = eval_clips.empty() ? train_clips : eval_clips;

  const bool multi = cfg.modality == "rgbd";
  UnimodalModel uni;
  MultimodalModel mm;
  const ParamRegistry* params;
  if (multi) {
    mm = build_multimodal(cfg);
    params = &mm.params;
  } else {
    uni = build_unimodal(cfg);
    params = &uni.params;
  }

  Sgd sgd;
  sgd.lr = cfg.lr;
  sgd.momentum = cfg.momentum;
  sgd.weight_decay = cfg.weight_decay;
  sgd.attach(*params);

  const Schedules sched = Schedules::make(cfg, (int)train_clips.size());
  Rng rng_shuffle(mix_seed(cfg.seed, 2));
  Rng rng_aug(mix_seed(cfg.seed, 3));
  Rng rng_sub(mix_seed(cfg.seed, 4));

  fs::create_directories(out_dir);
  {
    std::ofstream conf(out_dir / "config.txt");
    conf << serialize_config(cfg);
    if (!conf) throw IoError("cannot write " + (out_dir / "config.txt").string());
  }

  TrainResult result;
  result.best_checkpoint = out_dir / "best.drst";
  result.last_checkpoint = out_dir / "last.drst";

  std::vector<int> order(train_clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = (int)i;

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = (int)order.size() - 1; i > 0; --i)
      std::swap(order[(std::size_t)i], order[(std::size_t)rng_shuffle.uniform_int(0, i)]);

    for (std::size_t at = 0; at < order.size(); at += (std::size_t)cfg.batch) {
      const std::size_t take = std::min((std::size_t)cfg.batch, order.size() - at);
      const float tau = (float)sched.tau(step);
      const float inv_b = 1.0f / (float)take;

      StepRecord rec;
      rec.step = step;
      rec.lr = sched.lr(step);
      rec.tau = tau;
      int hit = 0;

      for (std::size_t bi = 0; bi < take; ++bi) {
        const Clip& c = train_clips[(std::size_t)order[at + bi]];
        const ClipTransform tr = train_transform(cfg.side, rng_aug);
        LossReport rep;
        int pred;
        if (multi) {
          MultimodalOut out = mm.forward(apply_transform(c.rgb, tr),
                                         apply_transform(c.depth, tr), tau, &rng_sub);
          rep = multimodal_loss(out.logits_rgb, out.logits_depth, out.logits_joint,
                                out.distill_rgb, out.distill_depth, out.decoded,
                                out.joint_temporal, c.label);
          pred = argmax_class(out.fused);
        } else {
          Tensor stream = apply_transform(uni.modality == "rgb" ? c.rgb : c.depth, tr);
          UnimodalOut out = uni.forward(stream, tau, &rng_sub);
          rep = unimodal_loss(out.agg.sharp, out.agg.sharp_sum, out.distill, c.label,
                              cfg.gamma);
          pred = argmax_class(out.agg.sharp_sum);
        }
        hit += pred == c.label;
        // clip loss scaled by 1/batch, so accumulated leaf grads equal the
        // batch-mean gradient; each clip runs its own tape
        backward(scale(rep.total_tensor, inv_b));

        if (rec.terms.empty())
          rec.terms = rep.terms;
        else
          for (std::size_t ti = 0; ti < rec.terms.size(); ++ti)
            rec.terms[ti].second += rep.terms[ti].second;
        rec.total += rep.total;
      }

      for (auto& [name, v] : rec.terms) v /= (double)take;
      rec.total /= (double)take;
      rec.accuracy = (double)hit / (double)take;

      sgd.lr = (float)rec.lr;
      sgd.step();
      result.steps.push_back(std::move(rec));
      ++step;
    }

    EvalResult ev = multi ? evaluate_multimodal(mm, eval_set, cfg.side, (float)cfg.tau_end)
                          : evaluate_unimodal(uni, eval_set, cfg.side, (float)cfg.tau_end);
    EpochRecord er;
    er.epoch = epoch;
    er.accuracy = ev.accuracy;
    er.addition = ev.addition;
    er.multiplication = ev.multiplication;
    result.epochs.push_back(er);

    save_checkpoint(result.last_checkpoint, *params);
    if (result.best_epoch < 0 || ev.accuracy > result.best_accuracy) {
      result.best_accuracy = ev.accuracy;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, *params);
    }

    if (cb && !cb(epoch, result)) break;
  }

  {
    std::ofstream m(out_dir / "metrics.csv");
    m << "step,lr,tau";
    if (!result.steps.empty())
      for (const auto& [name, v] : result.steps.front().terms) m << "," << name;
    m << ",total,accuracy\n";
    for (const StepRecord& s : result.steps) {
      m << s.step << "," << fmt(s.lr) << "," << fmt(s.tau);
      for (const auto& [name, v] : s.terms) m << "," << fmt(v);
      m << "," << fmt(s.total) << "," << fmt(s.accuracy) << "\n";
    }
    if (!m) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  }
  {
    std::ofstream e(out_dir / "eval.csv");
    e << (multi ? "epoch,accuracy,addition,multiplication\n" : "epoch,accuracy\n");
    for (const EpochRecord& er : result.epochs) {
      e << er.epoch << "," << fmt(er.accuracy);
      if (multi) e << "," << fmt(er.addition) << "," << fmt(er.multiplication);
      e << "\n";
    }
    if (!e) throw IoError("cannot write " + (out_dir / "eval.csv").string());
  }
  return result;
}

}  // namespace drst
