#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adamix/loss.hpp"
#include "adamix/mixers.hpp"
#include "adamix/segmodel.hpp"
#include "adamix/selfpaced.hpp"
#include "adamix/tensor.hpp"

namespace adamix {

enum class Paradigm { SelfTraining, MeanTeacher, CoTraining };

std::string_view to_string(Paradigm p);
Paradigm parse_paradigm(std::string_view name);

/// Strong perturbation: a mix strategy, or nullopt for "none".
using StrategyChoice = std::optional<MixStrategy>;

std::string strategy_name(const StrategyChoice& s);
StrategyChoice parse_strategy(std::string_view name);

struct ParadigmConfig {
  Paradigm paradigm = Paradigm::SelfTraining;
  StrategyChoice strategy = MixStrategy::AdaMix;
  double tau = 0.95;
  int K = 16;
  int S = 8;
  double ema_alpha = 0.99;
  double unsup_weight = 1.0;
};

/// Throws PreconditionError on invalid fields or when S does not divide the image size.
void validate(const ParadigmConfig& cfg, int image_height, int image_width);

struct TrainBatch {
  std::vector<Image> labeled_images;
  std::vector<LabelMap> labels;
  std::vector<Image> unlabeled_images;
};

/// Auxiliary partner of every sample in a sub-batch of size n: i <-> n-1-i. For odd
/// n >= 3 the middle sample would pair with itself, so {0, mid, n-1} form a cycle instead.
std::vector<int> reversed_pairing(int n);

struct StepContext {
  std::int64_t iteration = 0;
  AgeSchedule schedule;
  /// Root seed; per-step random streams derive from (seed, iteration).
  std::uint64_t seed = 0;
};

enum class Branch { Labeled, Unlabeled };

/// One mix-up invocation during a step.
struct MixRecord {
  Branch branch = Branch::Labeled;
  int model = 0;  ///< index of the trained model (co-training has two)
  int sample = 0;
  MixPlan plan;
};

struct StepLog {
  std::int64_t iteration = 0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  double loss_total = 0.0;  ///< loss_sup + unsup_weight * loss_unsup
  std::vector<MixRecord> mixes;
};

/// CSV header and rows for a step: one row per self-paced mix invocation, or a single
/// row with empty self-paced fields when the step had none.
std::string steplog_header();
std::vector<std::string> steplog_rows(const StepLog& log);

/// Deterministic stream for a (seed, iteration, purpose) triple.
std::mt19937_64 step_stream(std::uint64_t seed, std::int64_t iteration, std::uint32_t purpose);

StepLog train_step_st(ModelParams<float>& model, OptimizerState& opt, const TrainBatch& batch,
                      const ParadigmConfig& cfg, const StepContext& ctx);

/// Pseudo labels, confidences and self-paced predictions come from the teacher; the teacher
/// is only touched by the EMA update after the student's step.
StepLog train_step_mt(ModelParams<float>& student, ModelParams<float>& teacher, OptimizerState& opt,
                      const TrainBatch& batch, const ParadigmConfig& cfg, const StepContext& ctx);

/// Each model is supervised on unlabeled data by its peer's pseudo labels, and its mixes use
/// the peer's confidences and proxy loss. Reported losses are the mean over both models.
StepLog train_step_ct(ModelParams<float>& model1, ModelParams<float>& model2, OptimizerState& opt1,
                      OptimizerState& opt2, const TrainBatch& batch, const ParadigmConfig& cfg,
                      const StepContext& ctx);

}  // namespace adamix
