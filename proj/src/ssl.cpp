#include "adamix/ssl.hpp"

#include <cstdio>

#include "adamix/augment.hpp"
#include "adamix/confidence.hpp"

namespace adamix {

namespace {

enum Purpose : std::uint32_t { kLabeledAug = 0, kUnlabeledAug = 1, kStrongPixel = 2, kMixDraw = 3 };

struct WeakBatch {
  std::vector<Image> labeled;
  std::vector<LabelMap> labels;
  std::vector<Image> unlabeled;
};

struct Predictions {
  std::vector<Logits<float>> labeled;  // empty when the strategy does not need them
  std::vector<Logits<float>> unlabeled;
};

struct Perturbed {
  std::vector<Image> images;  // labeled first, then unlabeled
  std::vector<LabelMap> targets;
  std::vector<BinaryMask> unlabeled_masks;
  std::vector<MixRecord> mixes;
};

struct Objective {
  double sup = 0.0;
  double unsup = 0.0;
  ModelParams<float> grads;
};

bool unlabeled_active(const TrainBatch& batch, const ParadigmConfig& cfg) {
  return !batch.unlabeled_images.empty() && cfg.unsup_weight != 0.0;
}

bool needs_labeled_predictions(const ParadigmConfig& cfg) {
  return cfg.strategy && *cfg.strategy != MixStrategy::CutMix;
}

void check_batch(const TrainBatch& batch) {
  if (batch.labeled_images.empty()) throw PreconditionError("train step: labeled sub-batch is empty");
  if (batch.labeled_images.size() != batch.labels.size()) {
    throw PreconditionError("train step: labeled images and labels differ in count");
  }
}

WeakBatch weak_views(const TrainBatch& batch, const ParadigmConfig& cfg, const StepContext& ctx) {
  WeakBatch out;
  std::mt19937_64 lab_rng = step_stream(ctx.seed, ctx.iteration, kLabeledAug);
  for (std::size_t i = 0; i < batch.labeled_images.size(); ++i) {
    WeakView v = weak_aug(batch.labeled_images[i], &batch.labels[i], lab_rng);
    out.labeled.push_back(std::move(v.image));
    out.labels.push_back(std::move(*v.label));
  }
  if (unlabeled_active(batch, cfg)) {
    std::mt19937_64 unl_rng = step_stream(ctx.seed, ctx.iteration, kUnlabeledAug);
    for (const Image& img : batch.unlabeled_images) out.unlabeled.push_back(weak_aug(img, nullptr, unl_rng).image);
  }
  return out;
}

/// No-grad predictions of `model` on the weak views it is needed for.
Predictions predict(const ModelParams<float>& model, const WeakBatch& weak, const ParadigmConfig& cfg) {
  const bool lab = needs_labeled_predictions(cfg);
  std::vector<Image> inputs;
  if (lab) inputs.insert(inputs.end(), weak.labeled.begin(), weak.labeled.end());
  inputs.insert(inputs.end(), weak.unlabeled.begin(), weak.unlabeled.end());
  Predictions p;
  if (inputs.empty()) return p;
  auto logits = forward_batch(model, std::span<const Image>(inputs));
  const std::size_t nl = lab ? weak.labeled.size() : 0;
  p.labeled.assign(std::make_move_iterator(logits.begin()), std::make_move_iterator(logits.begin() + nl));
  p.unlabeled.assign(std::make_move_iterator(logits.begin() + nl), std::make_move_iterator(logits.end()));
  return p;
}

/// Mixes every sample of a sub-batch with its partner. `preds` may be empty for cutmix.
std::vector<MixedSample> mix_sub_batch(const std::vector<MixSource>& sources, const std::vector<Logits<float>>& preds,
                                       const ParadigmConfig& cfg, const StepContext& ctx, std::mt19937_64& mix_rng) {
  const int n = static_cast<int>(sources.size());
  const std::vector<int> partner = reversed_pairing(n);
  const PatchGrid grid(sources[0].image.height(), sources[0].image.width(), cfg.S);
  const double lambda = *cfg.strategy == MixStrategy::AdaMix ? age_lambda(ctx.iteration, ctx.schedule) : 0.0;
  std::vector<MixedSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const MixSource& o = sources[i];
    const MixSource& a = sources[partner[i]];
    switch (*cfg.strategy) {
      case MixStrategy::CutMix:
        out.push_back(cutmix(o, a, cfg.K, grid, mix_rng));
        break;
      case MixStrategy::UMix:
        out.push_back(umix(o, a, cfg.K, grid));
        break;
      case MixStrategy::IUMix:
        out.push_back(iumix(o, a, cfg.K, grid));
        break;
      case MixStrategy::AdaMix: {
        const double lbar = proxy_loss(preds[i], o.label, preds[partner[i]], a.label);
        out.push_back(adamix_with_state(o, a, self_paced_state(lbar, lambda, cfg.K), grid));
        break;
      }
    }
  }
  return out;
}

Perturbed perturb(const WeakBatch& weak, const Predictions& sup, const ParadigmConfig& cfg, const StepContext& ctx,
                  int model_index) {
  Perturbed out;
  std::mt19937_64 mix_rng = step_stream(ctx.seed, ctx.iteration, kMixDraw);
  std::mt19937_64 strong_rng = step_stream(ctx.seed, ctx.iteration, kStrongPixel);
  const int nl = static_cast<int>(weak.labeled.size());

  if (!cfg.strategy) {
    out.images = weak.labeled;
    out.targets = weak.labels;
  } else {
    std::vector<MixSource> sources;
    for (int i = 0; i < nl; ++i) {
      ConfidenceMap conf = needs_labeled_predictions(cfg)
                               ? pseudo_label(softmax_probs(sup.labeled[i])).confidence
                               : make_plane<ConfidenceMap>(weak.labeled[i].height(), weak.labeled[i].width(), 1.0f);
      sources.push_back({weak.labeled[i], weak.labels[i], std::move(conf)});
    }
    auto mixed = mix_sub_batch(sources, sup.labeled, cfg, ctx, mix_rng);
    for (int i = 0; i < nl; ++i) {
      out.images.push_back(std::move(mixed[i].image));
      out.targets.push_back(std::move(mixed[i].label));
      out.mixes.push_back({Branch::Labeled, model_index, i, std::move(mixed[i].plan)});
    }
  }

  const int nu = static_cast<int>(weak.unlabeled.size());
  if (nu == 0) return out;
  std::vector<MixSource> sources;
  for (int i = 0; i < nu; ++i) {
    PseudoLabels pl = pseudo_label(softmax_probs(sup.unlabeled[i]));
    sources.push_back({weak.unlabeled[i], std::move(pl.labels), std::move(pl.confidence)});
  }
  if (cfg.strategy) {
    auto mixed = mix_sub_batch(sources, sup.unlabeled, cfg, ctx, mix_rng);
    for (int i = 0; i < nu; ++i) {
      sources[i] = {std::move(mixed[i].image), std::move(mixed[i].label), std::move(mixed[i].confidence)};
      out.mixes.push_back({Branch::Unlabeled, model_index, i, std::move(mixed[i].plan)});
    }
  }
  for (int i = 0; i < nu; ++i) {
    out.images.push_back(strong_aug_pixel(sources[i].image, strong_rng));
    out.targets.push_back(std::move(sources[i].label));
    out.unlabeled_masks.push_back(confidence_mask(sources[i].confidence, cfg.tau));
  }
  return out;
}

Objective objective(const ModelParams<float>& model, const Perturbed& p, int nl, const ParadigmConfig& cfg) {
  auto fw = forward_train(model, std::span<const Image>(p.images));
  const int nu = static_cast<int>(p.images.size()) - nl;
  std::vector<Logits<float>> grad(p.images.size());
  Objective out;
  for (int i = 0; i < nl; ++i) {
    out.sup += seg_loss_grad(fw.logits[i], p.targets[i], nullptr, 1.0 / nl, grad[i]).total / nl;
  }
  for (int i = 0; i < nu; ++i) {
    const int k = nl + i;
    out.unsup += seg_loss_grad(fw.logits[k], p.targets[k], &p.unlabeled_masks[i], cfg.unsup_weight / nu, grad[k]).total / nu;
  }
  out.grads = backward(model, fw.tape, std::span<const Logits<float>>(grad));
  return out;
}

void check_step(const TrainBatch& batch, const ParadigmConfig& cfg) {
  check_batch(batch);
  validate(cfg, batch.labeled_images[0].height(), batch.labeled_images[0].width());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Paradigm p) {
  switch (p) {
    case Paradigm::SelfTraining:
      return "self_training";
    case Paradigm::MeanTeacher:
      return "mean_teacher";
    case Paradigm::CoTraining:
      return "co_training";
  }
  return "unknown";
}

Paradigm parse_paradigm(std::string_view name) {
  for (Paradigm p : {Paradigm::SelfTraining, Paradigm::MeanTeacher, Paradigm::CoTraining}) {
    if (to_string(p) == name) return p;
  }
  throw PreconditionError("unknown paradigm: " + std::string(name));
}

std::string strategy_name(const StrategyChoice& s) {
  return s ? std::string(to_string(*s)) : "none";
}

StrategyChoice parse_strategy(std::string_view name) {
  if (name == "none") return std::nullopt;
  return parse_mix_strategy(name);
}

void validate(const ParadigmConfig& cfg, int image_height, int image_width) {
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw PreconditionError("tau must lie in (0, 1]");
  if (cfg.K < 0) throw PreconditionError("K must be non-negative");
  if (cfg.S < 1 || image_height % cfg.S != 0 || image_width % cfg.S != 0) {
    throw PreconditionError("patch size S=" + std::to_string(cfg.S) + " must divide the image dimensions");
  }
  if (cfg.K > (image_height / cfg.S) * (image_width / cfg.S)) {
    throw PreconditionError("K exceeds the number of patches");
  }
  if (!(cfg.ema_alpha >= 0.0 && cfg.ema_alpha <= 1.0)) throw PreconditionError("ema_alpha must lie in [0, 1]");
  if (!(cfg.unsup_weight >= 0.0)) throw PreconditionError("unsup_weight must be non-negative");
}

std::vector<int> reversed_pairing(int n) {
  if (n < 0) throw PreconditionError("pairing: negative batch size");
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = n - 1 - i;
  if (n >= 3 && n % 2 == 1) {
    const int mid = n / 2;
    p[0] = mid;
    p[mid] = n - 1;
    p[n - 1] = 0;
  }
  return p;
}

std::mt19937_64 step_stream(std::uint64_t seed, std::int64_t iteration, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(iteration >> 32), purpose};
  return std::mt19937_64(seq);
}

std::string steplog_header() {
  return "iteration,lambda,proxy_loss,mask,weight,n,loss_sup,loss_unsup,loss_total";
}

std::vector<std::string> steplog_rows(const StepLog& log) {
  const std::string tail = "," + fmt(log.loss_sup) + "," + fmt(log.loss_unsup) + "," + fmt(log.loss_total);
  std::vector<std::string> rows;
  for (const MixRecord& m : log.mixes) {
    if (!m.plan.self_paced) continue;
    const SelfPacedState& s = *m.plan.self_paced;
    rows.push_back(std::to_string(log.iteration) + "," + fmt(s.lambda) + "," + fmt(s.proxy_loss) + "," +
                   std::to_string(s.mask) + "," + fmt(s.weight) + "," + std::to_string(s.n) + tail);
  }
  if (rows.empty()) rows.push_back(std::to_string(log.iteration) + ",,,,," + tail);
  return rows;
}

StepLog train_step_st(ModelParams<float>& model, OptimizerState& opt, const TrainBatch& batch,
                      const ParadigmConfig& cfg, const StepContext& ctx) {
  check_step(batch, cfg);
  const WeakBatch weak = weak_views(batch, cfg, ctx);
  const Perturbed p = perturb(weak, predict(model, weak, cfg), cfg, ctx, 0);
  Objective obj = objective(model, p, static_cast<int>(weak.labeled.size()), cfg);
  optimizer_step(opt, model, obj.grads);
  StepLog log;
  log.iteration = ctx.iteration;
  log.loss_sup = obj.sup;
  log.loss_unsup = obj.unsup;
  log.loss_total = obj.sup + cfg.unsup_weight * obj.unsup;
  log.mixes = p.mixes;
  return log;
}

StepLog train_step_mt(ModelParams<float>& student, ModelParams<float>& teacher, OptimizerState& opt,
                      const TrainBatch& batch, const ParadigmConfig& cfg, const StepContext& ctx) {
  check_step(batch, cfg);
  if (!teacher.compatible(student)) throw PreconditionError("mean teacher: teacher and student differ in layout");
  const WeakBatch weak = weak_views(batch, cfg, ctx);
  const Perturbed p = perturb(weak, predict(teacher, weak, cfg), cfg, ctx, 0);
  Objective obj = objective(student, p, static_cast<int>(weak.labeled.size()), cfg);
  optimizer_step(opt, student, obj.grads);
  teacher = ema_update(teacher, student, cfg.ema_alpha);
  StepLog log;
  log.iteration = ctx.iteration;
  log.loss_sup = obj.sup;
  log.loss_unsup = obj.unsup;
  log.loss_total = obj.sup + cfg.unsup_weight * obj.unsup;
  log.mixes = p.mixes;
  return log;
}

StepLog train_step_ct(ModelParams<float>& model1, ModelParams<float>& model2, OptimizerState& opt1,
                      OptimizerState& opt2, const TrainBatch& batch, const ParadigmConfig& cfg,
                      const StepContext& ctx) {
  check_step(batch, cfg);
  if (!model1.compatible(model2)) throw PreconditionError("co-training: models differ in layout");
  const WeakBatch weak = weak_views(batch, cfg, ctx);
  const Predictions pred1 = predict(model1, weak, cfg);
  const Predictions pred2 = predict(model2, weak, cfg);
  // Each model's perturbed inputs and targets come from its peer.
  const Perturbed p1 = perturb(weak, pred2, cfg, ctx, 0);
  const Perturbed p2 = perturb(weak, pred1, cfg, ctx, 1);
  const int nl = static_cast<int>(weak.labeled.size());
  Objective o1 = objective(model1, p1, nl, cfg);
  Objective o2 = objective(model2, p2, nl, cfg);
  optimizer_step(opt1, model1, o1.grads);
  optimizer_step(opt2, model2, o2.grads);
  StepLog log;
  log.iteration = ctx.iteration;
  log.loss_sup = 0.5 * (o1.sup + o2.sup);
  log.loss_unsup = 0.5 * (o1.unsup + o2.unsup);
  log.loss_total = log.loss_sup + cfg.unsup_weight * log.loss_unsup;
  log.mixes = p1.mixes;
  log.mixes.insert(log.mixes.end(), p2.mixes.begin(), p2.mixes.end());
  return log;
}

}  // namespace adamix
