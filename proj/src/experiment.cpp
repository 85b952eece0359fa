#include "adamix/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <tuple>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "adamix/loss.hpp"

namespace adamix {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPeerSeedSalt = 0x9E3779B97F4A7C15ull;
constexpr int kEvalChunk = 8;

// Keeps glibc from returning activation buffers to the kernel after every step.
void keep_freed_memory() {
#ifdef __GLIBC__
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

/// Endless shuffled passes over a pool of sample indices.
class IndexSampler {
 public:
  IndexSampler(std::vector<int> pool, std::uint64_t seed, std::uint32_t purpose) : order_(std::move(pool)) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xDA7Au, purpose};
    rng_.seed(seq);
    pos_ = order_.size();
  }

  int next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<int> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_lines(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << header << '\n';
  for (const std::string& r : rows) out << r << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<Logits<float>> predict_all(const ModelParams<float>& model, const Dataset& data,
                                       const std::vector<int>& idx) {
  std::vector<Logits<float>> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += kEvalChunk) {
    std::vector<Image> chunk;
    for (std::size_t k = start; k < std::min(idx.size(), start + kEvalChunk); ++k) chunk.push_back(data.image(idx[k]));
    auto logits = forward_batch(model, std::span<const Image>(chunk));
    for (auto& l : logits) out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const RunConfig& cfg) {
  const ParadigmConfig& p = cfg.paradigm;
  return {{"schema_version", kRunConfigSchemaVersion},
          {"dataset", to_json(cfg.dataset)},
          {"data_dir", cfg.data_dir},
          {"paradigm",
           {{"paradigm", to_string(p.paradigm)},
            {"strategy", strategy_name(p.strategy)},
            {"tau", p.tau},
            {"K", p.K},
            {"S", p.S},
            {"ema_alpha", p.ema_alpha},
            {"unsup_weight", p.unsup_weight}}},
          {"model", {{"base_width", cfg.base_width}}},
          {"optimizer",
           {{"lr", cfg.optimizer.lr},
            {"beta1", cfg.optimizer.beta1},
            {"beta2", cfg.optimizer.beta2},
            {"eps", cfg.optimizer.eps},
            {"weight_decay", cfg.optimizer.weight_decay}}},
          {"schedule",
           {{"epochs", cfg.epochs},
            {"iterations_per_epoch", cfg.iterations_per_epoch},
            {"labeled_batch", cfg.labeled_batch},
            {"unlabeled_batch", cfg.unlabeled_batch}}},
          {"seed", cfg.seed},
          {"output_dir", cfg.output_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("schema_version")) throw FormatError("run config: missing schema_version");
    const int version = j.at("schema_version");
    if (version != kRunConfigSchemaVersion) {
      throw FormatError("run config: schema_version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kRunConfigSchemaVersion) + ")");
    }
    RunConfig c;
    if (j.contains("dataset")) c.dataset = dataset_spec_from_json(j.at("dataset"));
    c.data_dir = j.value("data_dir", c.data_dir);
    if (j.contains("paradigm")) {
      const auto& p = j.at("paradigm");
      c.paradigm.paradigm = parse_paradigm(p.value("paradigm", std::string(to_string(c.paradigm.paradigm))));
      c.paradigm.strategy = parse_strategy(p.value("strategy", strategy_name(c.paradigm.strategy)));
      c.paradigm.tau = p.value("tau", c.paradigm.tau);
      c.paradigm.K = p.value("K", c.paradigm.K);
      c.paradigm.S = p.value("S", c.paradigm.S);
      c.paradigm.ema_alpha = p.value("ema_alpha", c.paradigm.ema_alpha);
      c.paradigm.unsup_weight = p.value("unsup_weight", c.paradigm.unsup_weight);
    }
    if (j.contains("model")) c.base_width = j.at("model").value("base_width", c.base_width);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.lr = o.value("lr", c.optimizer.lr);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.eps = o.value("eps", c.optimizer.eps);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      c.epochs = s.value("epochs", c.epochs);
      c.iterations_per_epoch = s.value("iterations_per_epoch", c.iterations_per_epoch);
      c.labeled_batch = s.value("labeled_batch", c.labeled_batch);
      c.unlabeled_batch = s.value("unlabeled_batch", c.unlabeled_batch);
    }
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
}

void validate(const RunConfig& cfg) {
  validate(cfg.dataset);
  validate(cfg.paradigm, cfg.dataset.image_size, cfg.dataset.image_size);
  if (cfg.dataset.image_size % kTotalDownsampling != 0) {
    throw PreconditionError("image_size must be a multiple of " + std::to_string(kTotalDownsampling));
  }
  if (cfg.base_width < 1) throw PreconditionError("base_width must be positive");
  if (!(cfg.optimizer.lr > 0.0) || cfg.optimizer.weight_decay < 0.0) {
    throw PreconditionError("optimizer: lr must be positive and weight_decay non-negative");
  }
  if (cfg.epochs < 1 || cfg.iterations_per_epoch < 0) throw PreconditionError("schedule: invalid epoch settings");
  if (cfg.labeled_batch < 1 || cfg.unlabeled_batch < 0) throw PreconditionError("schedule: invalid batch sizes");
}

ArchitectureConfig architecture_of(const RunConfig& cfg) {
  return {1, cfg.dataset.n_classes, cfg.base_width};
}

int iterations_per_epoch(const RunConfig& cfg) {
  if (cfg.iterations_per_epoch > 0) return cfg.iterations_per_epoch;
  const int labeled = labeled_count(cfg.dataset);
  const int unlabeled = cfg.dataset.n_train - labeled;
  if (unlabeled > 0 && cfg.unlabeled_batch > 0) return (unlabeled + cfg.unlabeled_batch - 1) / cfg.unlabeled_batch;
  return (labeled + cfg.labeled_batch - 1) / cfg.labeled_batch;
}

std::int64_t total_iterations(const RunConfig& cfg) {
  return static_cast<std::int64_t>(cfg.epochs) * iterations_per_epoch(cfg);
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return Dataset(generate(cfg.dataset));
  ImportedDataset imported = import_dataset(cfg.data_dir);
  if (!(imported.spec == cfg.dataset)) {
    throw PreconditionError("dataset in " + cfg.data_dir + " was generated from a different spec than the config");
  }
  return Dataset(std::move(imported.records));
}

std::string curves_header() { return "strategy,paradigm,seed,iteration,loss_unsup,loss_val,dsc_val"; }

std::string curve_row(const RunConfig& cfg, const CurvePoint& p) {
  return strategy_name(cfg.paradigm.strategy) + "," + std::string(to_string(cfg.paradigm.paradigm)) + "," +
         std::to_string(cfg.seed) + "," + std::to_string(p.iteration) + "," + fmt(p.loss_unsup) + "," +
         fmt(p.loss_val) + "," + fmt(p.dsc_val);
}

std::pair<double, double> validation_scores(const ModelParams<float>& model, const Dataset& data, Split split,
                                            int n_classes) {
  const auto& idx = data.indices(split);
  if (idx.empty()) return {0.0, 0.0};
  const auto logits = predict_all(model, data, idx);
  double loss = 0.0;
  std::vector<MetricReport> reports;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const LabelMap& gt = data.label(idx[k]);
    loss += seg_loss(logits[k], gt).total;
    reports.push_back(evaluate_sample(pseudo_label(softmax_probs(logits[k])).labels, gt, n_classes));
  }
  return {loss / static_cast<double>(idx.size()), aggregate(reports, n_classes).dsc};
}

TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainHooks& hooks) {
  validate(cfg);
  keep_freed_memory();
  const ArchitectureConfig arch = architecture_of(cfg);
  const ParadigmConfig& pc = cfg.paradigm;
  const auto& labeled = data.indices(Split::TrainLabeled);
  const auto& unlabeled = data.indices(Split::TrainUnlabeled);
  if (labeled.empty()) throw PreconditionError("train: no labeled samples");
  const bool use_unlabeled = pc.unsup_weight != 0.0 && cfg.unlabeled_batch > 0 && !unlabeled.empty();

  TrainResult r;
  r.model = init_params<float>(arch, cfg.seed);
  OptimizerState opt(r.model, cfg.optimizer);
  std::optional<OptimizerState> peer_opt;
  if (pc.paradigm == Paradigm::MeanTeacher) r.teacher = r.model;
  if (pc.paradigm == Paradigm::CoTraining) {
    r.peer = init_params<float>(arch, cfg.seed ^ kPeerSeedSalt);
    peer_opt.emplace(*r.peer, cfg.optimizer);
  }

  IndexSampler lab_sampler(labeled, cfg.seed, 0);
  IndexSampler unl_sampler(unlabeled, cfg.seed, 1);
  const int per_epoch = iterations_per_epoch(cfg);
  const std::int64_t total = total_iterations(cfg);
  StepContext ctx;
  ctx.schedule.max_iteration = std::max<std::int64_t>(1, total - 1);
  ctx.seed = cfg.seed;

  double unsup_sum = 0.0;
  for (std::int64_t t = 0; t < total; ++t) {
    TrainBatch batch;
    for (int k = 0; k < cfg.labeled_batch; ++k) {
      const int i = lab_sampler.next();
      batch.labeled_images.push_back(data.image(i));
      batch.labels.push_back(data.label(i));
    }
    if (use_unlabeled) {
      for (int k = 0; k < cfg.unlabeled_batch; ++k) batch.unlabeled_images.push_back(data.image(unl_sampler.next()));
    }
    ctx.iteration = t;
    StepLog log;
    switch (pc.paradigm) {
      case Paradigm::SelfTraining:
        log = train_step_st(r.model, opt, batch, pc, ctx);
        break;
      case Paradigm::MeanTeacher:
        log = train_step_mt(r.model, *r.teacher, opt, batch, pc, ctx);
        break;
      case Paradigm::CoTraining:
        log = train_step_ct(r.model, *r.peer, opt, *peer_opt, batch, pc, ctx);
        break;
    }
    for (std::string& row : steplog_rows(log)) r.steplog.push_back(std::move(row));
    unsup_sum += log.loss_unsup;
    if (hooks.on_step) hooks.on_step(log);

    if ((t + 1) % per_epoch == 0) {
      CurvePoint p;
      p.iteration = t + 1;
      p.loss_unsup = unsup_sum / per_epoch;
      std::tie(p.loss_val, p.dsc_val) = validation_scores(r.model, data, Split::Val, arch.classes);
      r.curves.push_back(p);
      unsup_sum = 0.0;
    }
  }
  r.iterations = total;
  return r;
}

Evaluation evaluate(const ModelParams<float>& model, const Dataset& data, Split split, int n_classes) {
  const auto& idx = data.indices(split);
  const auto logits = predict_all(model, data, idx);
  Evaluation ev;
  std::vector<MetricReport> reports;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const LabelMap pred = pseudo_label(softmax_probs(logits[k])).labels;
    MetricReport rep = evaluate_sample(pred, data.label(idx[k]), n_classes);
    reports.push_back(rep);
    ev.samples.push_back({data.meta(idx[k]).id, std::move(rep)});
  }
  ev.summary = aggregate(reports, n_classes);
  return ev;
}

std::string eval_header() { return "sample_id,class,dsc,jaccard,hd95,asd,undefined_flags"; }

std::vector<std::string> eval_rows(const Evaluation& ev) {
  std::vector<std::string> rows;
  for (const SampleEvaluation& s : ev.samples) {
    for (const ClassMetrics& m : s.report.per_class) {
      rows.push_back(s.sample_id + "," + std::to_string(m.cls) + "," + fmt(m.dsc) + "," + fmt(m.jaccard) + "," +
                     fmt_opt(m.hd95) + "," + fmt_opt(m.asd) + "," + describe_flags(m.flags));
    }
  }
  return rows;
}

void ensure_fresh_directory(const fs::path& dir) {
  if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir))) {
    throw PreconditionError("refusing to overwrite existing run directory " + dir.string());
  }
}

namespace {

nlohmann::json summary_json(const Evaluation& ev, Split split) {
  const DatasetMetrics& s = ev.summary;
  nlohmann::json j{{"split", to_string(split)},
                   {"samples", ev.samples.size()},
                   {"dsc", s.dsc},
                   {"jaccard", s.jaccard},
                   {"class_dsc", s.class_dsc}};
  j["hd95"] = s.hd95 ? nlohmann::json(*s.hd95) : nlohmann::json(nullptr);
  j["asd"] = s.asd ? nlohmann::json(*s.asd) : nlohmann::json(nullptr);
  return j;
}

fs::path eval_file(const fs::path& dir, Split split, const char* ext) {
  const std::string stem = split == Split::Test ? "eval" : "eval_" + std::string(to_string(split));
  return dir / (stem + ext);
}

}  // namespace

RunArtifacts run_training(const RunConfig& config, const fs::path& out_dir) {
  validate(config);
  ensure_fresh_directory(out_dir);
  RunConfig cfg = config;
  cfg.output_dir = out_dir.string();
  const Dataset data = load_dataset(cfg);
  fs::create_directories(out_dir / "checkpoints");
  write_json(out_dir / "config.json", to_json(cfg));

  TrainResult r = train(cfg, data);
  write_lines(out_dir / "steplog.csv", steplog_header(), r.steplog);
  std::vector<std::string> curve_rows;
  for (const CurvePoint& p : r.curves) curve_rows.push_back(curve_row(cfg, p));
  write_lines(out_dir / "curves.csv", curves_header(), curve_rows);
  const CheckpointMeta meta{r.iterations, cfg.seed};
  save_checkpoint((out_dir / "checkpoints" / "model.ckpt").string(), r.model, meta);
  if (r.teacher) save_checkpoint((out_dir / "checkpoints" / "teacher.ckpt").string(), *r.teacher, meta);
  if (r.peer) save_checkpoint((out_dir / "checkpoints" / "peer.ckpt").string(), *r.peer, meta);

  Evaluation ev = evaluate(r.model, data, Split::Test, cfg.dataset.n_classes);
  write_lines(eval_file(out_dir, Split::Test, ".csv"), eval_header(), eval_rows(ev));
  nlohmann::json summary = summary_json(ev, Split::Test);
  summary["unlabeled_label_reads"] = data.label_reads(Split::TrainUnlabeled);
  write_json(eval_file(out_dir, Split::Test, ".json"), summary);
  return {std::move(r), ev};
}

Evaluation run_evaluation(const fs::path& run_dir, Split split) {
  const RunConfig cfg = load_run_config(run_dir / "config.json");
  const LoadedCheckpoint ckpt = load_checkpoint((run_dir / "checkpoints" / "model.ckpt").string());
  if (!(ckpt.params.arch() == architecture_of(cfg))) {
    throw FormatError("checkpoint architecture does not match " + (run_dir / "config.json").string());
  }
  const Dataset data = load_dataset(cfg);
  Evaluation ev = evaluate(ckpt.params, data, split, cfg.dataset.n_classes);
  write_lines(eval_file(run_dir, split, ".csv"), eval_header(), eval_rows(ev));
  write_json(eval_file(run_dir, split, ".json"), summary_json(ev, split));
  return ev;
}

}  // namespace adamix
