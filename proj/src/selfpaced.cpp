#include "adamix/selfpaced.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adamix/loss.hpp"

namespace adamix {

namespace {

void check_solver_args(double proxy_loss, double lambda, const char* who) {
  if (!(lambda > 0.0)) throw PreconditionError(std::string(who) + ": lambda must be positive");
  if (!(proxy_loss >= 0.0)) throw PreconditionError(std::string(who) + ": proxy loss must be non-negative");
}

}  // namespace

double age_lambda(std::int64_t t, const AgeSchedule& schedule) {
  if (schedule.max_iteration < 1) throw PreconditionError("age_lambda: max iteration must be >= 1");
  if (t < 0 || t > schedule.max_iteration) {
    throw PreconditionError("age_lambda: iteration " + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.max_iteration) + "]");
  }
  const double r = 1.0 - static_cast<double>(t) / static_cast<double>(schedule.max_iteration);
  return std::exp(-5.0 * r * r);
}

double proxy_loss(const Logits<float>& pred_original, const LabelMap& label_original,
                  const Logits<float>& pred_auxiliary, const LabelMap& label_auxiliary) {
  return seg_loss(pred_original, label_original).total + seg_loss(pred_auxiliary, label_auxiliary).total;
}

int solve_mask(double proxy_loss, double lambda) {
  check_solver_args(proxy_loss, lambda, "solve_mask");
  return proxy_loss < lambda ? 1 : 0;
}

double solve_weight(double proxy_loss, double lambda) {
  check_solver_args(proxy_loss, lambda, "solve_weight");
  return std::clamp(1.0 - proxy_loss / lambda, 0.0, 1.0);
}

MixRule mix_rule(int mask) {
  if (mask != 0 && mask != 1) throw PreconditionError("mix_rule: mask must be 0 or 1");
  return mask == 1 ? MixRule::HighFromLow : MixRule::LowFromHigh;
}

int mask_of(MixRule rule) {
  switch (rule) {
    case MixRule::HighFromLow:
      return 1;
    case MixRule::LowFromHigh:
      return 0;
    case MixRule::Random:
      break;
  }
  throw PreconditionError("mask_of: random rule has no self-paced mask");
}

int patch_count(double weight, int max_patches) {
  if (max_patches < 0) throw PreconditionError("patch_count: K must be non-negative");
  const double raw = std::floor(weight * max_patches + 0.5);
  return static_cast<int>(std::clamp(raw, 0.0, static_cast<double>(max_patches)));
}

SelfPacedState self_paced_state(double proxy_loss, double lambda, int max_patches) {
  SelfPacedState s;
  s.lambda = lambda;
  s.proxy_loss = proxy_loss;
  s.mask = solve_mask(proxy_loss, lambda);
  s.weight = solve_weight(proxy_loss, lambda);
  s.n = patch_count(s.weight, max_patches);
  return s;
}

double mask_objective(int m, double proxy_loss, double lambda) {
  return m * proxy_loss - lambda * m;
}

double weight_objective(double v, double proxy_loss, double lambda) {
  return v * proxy_loss + lambda * (0.5 * v * v - v);
}

namespace oracle {

MaskOracleResult brute_force_mask(double proxy_loss, double lambda) {
  const double f0 = mask_objective(0, proxy_loss, lambda);
  const double f1 = mask_objective(1, proxy_loss, lambda);
  return {f1 < f0 ? 1 : 0, f0 == f1};
}

WeightOracleResult brute_force_weight(double proxy_loss, double lambda, double grid_step) {
  if (!(grid_step > 0.0) || grid_step > 1e-4) throw PreconditionError("brute_force_weight: grid step must be in (0, 1e-4]");
  const auto steps = static_cast<long>(std::ceil(1.0 / grid_step));
  WeightOracleResult best{0.0, weight_objective(0.0, proxy_loss, lambda)};
  for (long k = 1; k <= steps; ++k) {
    const double v = std::min(1.0, k * grid_step);
    const double f = weight_objective(v, proxy_loss, lambda);
    if (f < best.objective) best = {v, f};
  }
  return best;
}

}  // namespace oracle

}  // namespace adamix
