#pragma once

#include <cstdint>

#include "adamix/tensor.hpp"

namespace adamix {

/// Gaussian ramp-up of the age parameter over t in [0, max_iteration].
struct AgeSchedule {
  std::int64_t max_iteration = 1;
};

enum class MixRule { LowFromHigh, HighFromLow, Random };

/// Self-paced decision for one (original, auxiliary) pair.
struct SelfPacedState {
  double lambda = 0.0;
  double proxy_loss = 0.0;
  int mask = 0;
  double weight = 0.0;
  int n = 0;
};

/// lambda(t) = exp(-5 (1 - t/t_m)^2).
double age_lambda(std::int64_t t, const AgeSchedule& schedule);

/// Sum of the CE+Dice losses of the original and auxiliary predictions against
/// their (pseudo) labels.
double proxy_loss(const Logits<float>& pred_original, const LabelMap& label_original,
                  const Logits<float>& pred_auxiliary, const LabelMap& label_auxiliary);

/// Hard-regularizer minimizer: 1 iff proxy_loss < lambda.
int solve_mask(double proxy_loss, double lambda);

/// Linear-regularizer minimizer: clamp(1 - proxy_loss / lambda, 0, 1).
double solve_weight(double proxy_loss, double lambda);

/// m = 1 -> HighFromLow (high-confidence patches replaced by low-confidence ones),
/// m = 0 -> LowFromHigh.
MixRule mix_rule(int mask);
int mask_of(MixRule rule);

/// round(v * K) half-up, clamped to [0, K].
int patch_count(double weight, int max_patches);

/// Full self-paced decision from a proxy loss and an age.
SelfPacedState self_paced_state(double proxy_loss, double lambda, int max_patches);

/// Objectives minimized by the two solvers.
double mask_objective(int m, double proxy_loss, double lambda);
double weight_objective(double v, double proxy_loss, double lambda);

namespace oracle {

struct MaskOracleResult {
  int argmin = 0;
  bool tie = false;  ///< both choices reach the same objective
};

/// Enumerates m in {0, 1}.
MaskOracleResult brute_force_mask(double proxy_loss, double lambda);

struct WeightOracleResult {
  double argmin = 0.0;
  double objective = 0.0;
};

/// Scans v over {0, step, 2*step, ..., 1}; step must be <= 1e-4.
WeightOracleResult brute_force_weight(double proxy_loss, double lambda, double grid_step = 1e-4);

}  // namespace oracle

}  // namespace adamix
