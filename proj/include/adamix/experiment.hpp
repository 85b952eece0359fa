#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "adamix/data_synth.hpp"
#include "adamix/metrics.hpp"
#include "adamix/segmodel.hpp"
#include "adamix/ssl.hpp"

namespace adamix {

inline constexpr int kRunConfigSchemaVersion = 1;

struct RunConfig {
  DatasetSpec dataset;
  /// Exported dataset to train on; generated in memory from `dataset` when empty.
  std::string data_dir;
  ParadigmConfig paradigm;
  int base_width = 16;
  /// Desk-scale step size; AdamWConfig itself defaults to the full-scale 1e-4.
  AdamWConfig optimizer{.lr = 1e-3};
  int epochs = 40;
  /// 0 derives one pass over the unlabeled set (or the labeled set when there is none).
  int iterations_per_epoch = 0;
  int labeled_batch = 4;
  int unlabeled_batch = 4;
  std::uint64_t seed = 0;
  std::string output_dir;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Throws FormatError on a missing or different schema_version, PreconditionError on invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void validate(const RunConfig& cfg);

ArchitectureConfig architecture_of(const RunConfig& cfg);
int iterations_per_epoch(const RunConfig& cfg);
std::int64_t total_iterations(const RunConfig& cfg);

/// Loads `data_dir` (checking it matches the spec) or generates the dataset.
Dataset load_dataset(const RunConfig& cfg);

struct CurvePoint {
  std::int64_t iteration = 0;  ///< iterations completed
  double loss_unsup = 0.0;     ///< mean over the epoch's steps
  double loss_val = 0.0;
  double dsc_val = 0.0;
};

std::string curves_header();
std::string curve_row(const RunConfig& cfg, const CurvePoint& p);

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  ModelParams<float> model;  ///< evaluated model: student (self-training, mean teacher) or model 1 (co-training)
  std::optional<ModelParams<float>> teacher;
  std::optional<ModelParams<float>> peer;
  std::vector<std::string> steplog;  ///< CSV rows without header
  std::vector<CurvePoint> curves;
  std::int64_t iterations = 0;
};

/// Full training run in memory. Only labeled-split labels are read for training and
/// validation labels for the curves.
TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainHooks& hooks = {});

struct SampleEvaluation {
  std::string sample_id;
  MetricReport report;
};

struct Evaluation {
  std::vector<SampleEvaluation> samples;
  DatasetMetrics summary;
};

Evaluation evaluate(const ModelParams<float>& model, const Dataset& data, Split split, int n_classes);

/// Mean seg_loss and dataset DSC on a split.
std::pair<double, double> validation_scores(const ModelParams<float>& model, const Dataset& data, Split split,
                                            int n_classes);

std::string eval_header();
std::vector<std::string> eval_rows(const Evaluation& ev);

/// Throws unless `dir` is absent or an empty directory.
void ensure_fresh_directory(const std::filesystem::path& dir);

struct RunArtifacts {
  TrainResult result;
  Evaluation test;
};

/// Trains and writes config.json, steplog.csv, curves.csv, eval.csv (test split) and checkpoints/.
RunArtifacts run_training(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Re-evaluates a run directory's checkpoint on a split and (re)writes eval.csv.
Evaluation run_evaluation(const std::filesystem::path& run_dir, Split split);

struct CompareSummaryRow {
  std::string strategy;
  std::string paradigm;
  int runs = 0;
  double dsc_mean = 0.0, dsc_std = 0.0;
  double jaccard_mean = 0.0, jaccard_std = 0.0;
  double hd95_mean = 0.0, hd95_std = 0.0;
  double asd_mean = 0.0, asd_std = 0.0;
};

struct CompareRun {
  int config_index = 0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  DatasetMetrics test;
};

struct CompareResult {
  std::vector<CompareSummaryRow> summary;  ///< one row per config
  std::vector<CompareRun> runs;            ///< config-major, then seed order
};

/// Throws PreconditionError unless every config shares dataset, model, optimizer and schedule
/// settings; only the paradigm block may differ.
void check_comparable(const std::vector<RunConfig>& configs);

/// Runs every config for every seed (ADAMIX_NUM_WORKERS parallel workers) and writes
/// runs/, curves.csv and summary.csv into out_dir.
CompareResult run_compare(const std::vector<RunConfig>& configs, const std::vector<std::uint64_t>& seeds,
                          const std::filesystem::path& out_dir);

int worker_count_from_env();

/// Renders loss_unsup, loss_val and dsc_val curves from curves.csv files to SVG line charts.
std::vector<std::filesystem::path> render_plots(const std::vector<std::filesystem::path>& inputs,
                                                const std::filesystem::path& out_dir);

}  // namespace adamix
