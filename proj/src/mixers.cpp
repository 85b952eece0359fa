#include "adamix/mixers.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "adamix/loss.hpp"

namespace adamix {

std::string_view to_string(MixStrategy s) {
  switch (s) {
    case MixStrategy::CutMix:
      return "cutmix";
    case MixStrategy::UMix:
      return "umix";
    case MixStrategy::IUMix:
      return "iumix";
    case MixStrategy::AdaMix:
      return "adamix";
  }
  return "unknown";
}

std::string_view to_string(MixRule r) {
  switch (r) {
    case MixRule::LowFromHigh:
      return "L_from_H";
    case MixRule::HighFromLow:
      return "H_from_L";
    case MixRule::Random:
      return "random";
  }
  return "unknown";
}

MixStrategy parse_mix_strategy(std::string_view name) {
  for (MixStrategy s : {MixStrategy::CutMix, MixStrategy::UMix, MixStrategy::IUMix, MixStrategy::AdaMix}) {
    if (to_string(s) == name) return s;
  }
  throw PreconditionError("unknown mix strategy: " + std::string(name));
}

void validate_plan(const MixPlan& plan) {
  const int total = plan.grid.total();
  if (plan.n < 0 || plan.n > total) throw PreconditionError("mix plan: patch count out of range");
  if (static_cast<int>(plan.pairs.size()) != plan.n) throw PreconditionError("mix plan: |pairs| != n");
  std::vector<char> dst_seen(total, 0), src_seen(total, 0);
  for (const PatchPair& p : plan.pairs) {
    if (p.dst < 0 || p.dst >= total || p.src < 0 || p.src >= total) {
      throw PreconditionError("mix plan: patch index out of range");
    }
    if (dst_seen[p.dst]++) throw PreconditionError("mix plan: overlapping destination patches");
    if (src_seen[p.src]++) throw PreconditionError("mix plan: repeated source patch");
  }
}

nlohmann::json to_json(const MixPlan& plan) {
  nlohmann::json j;
  j["strategy"] = to_string(plan.strategy);
  j["rule"] = to_string(plan.rule);
  j["n"] = plan.n;
  j["patch_size"] = plan.grid.patch_size();
  j["grid"] = {plan.grid.rows(), plan.grid.cols()};
  auto& pairs = j["pairs"] = nlohmann::json::array();
  for (const PatchPair& p : plan.pairs) pairs.push_back({p.dst, p.src});
  if (plan.self_paced) {
    j["lambda"] = plan.self_paced->lambda;
    j["proxy_loss"] = plan.self_paced->proxy_loss;
    j["m"] = plan.self_paced->mask;
    j["v"] = plan.self_paced->weight;
  }
  return j;
}

namespace {

void check_sources(const MixSource& a, const MixSource& b, const PatchGrid& grid) {
  for (const MixSource* s : {&a, &b}) {
    require_same_spatial(s->image, s->label, "mix source label");
    require_same_spatial(s->image, s->confidence, "mix source confidence");
    if (s->image.height() != grid.height() || s->image.width() != grid.width()) {
      throw ShapeError("mix: patch grid does not match image dimensions");
    }
  }
  if (a.image.channels() != b.image.channels()) throw ShapeError("mix: channel counts differ");
}

template <typename Map>
void copy_patch(Map& dst, const Map& src, const PatchGrid::Rect& d, const PatchGrid::Rect& s) {
  for (int c = 0; c < dst.channels(); ++c) {
    for (int y = 0; y < d.y1 - d.y0; ++y) {
      for (int x = 0; x < d.x1 - d.x0; ++x) dst(c, d.y0 + y, d.x0 + x) = src(c, s.y0 + y, s.x0 + x);
    }
  }
}

void check_count(int n, const PatchGrid& grid, const char* who) {
  if (n < 0 || n > grid.total()) {
    throw PreconditionError(std::string(who) + ": patch count " + std::to_string(n) + " outside [0, " +
                            std::to_string(grid.total()) + "]");
  }
}

MixPlan ranked_plan(MixStrategy strategy, MixRule rule, std::span<const double> original_scores,
                    std::span<const double> auxiliary_scores, int n, const PatchGrid& grid) {
  check_count(n, grid, to_string(strategy).data());
  if (original_scores.size() != static_cast<std::size_t>(grid.total()) ||
      auxiliary_scores.size() != static_cast<std::size_t>(grid.total())) {
    throw ShapeError("mix: score count does not match the patch grid");
  }
  const bool low_from_high = rule == MixRule::LowFromHigh;
  const PatchRanking dst = rank_patches(original_scores, low_from_high ? RankOrder::LowestFirst : RankOrder::HighestFirst);
  const PatchRanking src = rank_patches(auxiliary_scores, low_from_high ? RankOrder::HighestFirst : RankOrder::LowestFirst);
  MixPlan plan;
  plan.strategy = strategy;
  plan.rule = rule;
  plan.n = n;
  plan.grid = grid;
  for (int i = 0; i < n; ++i) plan.pairs.push_back({dst[i].index, src[i].index});
  return plan;
}

}  // namespace

MixedSample transplant(const MixSource& original, const MixSource& auxiliary, MixPlan plan) {
  check_sources(original, auxiliary, plan.grid);
  validate_plan(plan);
  MixedSample out{original.image, original.label, original.confidence, std::move(plan)};
  for (const PatchPair& p : out.plan.pairs) {
    const auto d = out.plan.grid.rect(p.dst);
    const auto s = out.plan.grid.rect(p.src);
    copy_patch(out.image, auxiliary.image, d, s);
    copy_patch(out.label, auxiliary.label, d, s);
    copy_patch(out.confidence, auxiliary.confidence, d, s);
  }
  return out;
}

MixedSample cutmix(const MixSource& original, const MixSource& auxiliary, int n, const PatchGrid& grid,
                   std::mt19937_64& rng) {
  check_count(n, grid, "cutmix");
  std::vector<int> idx(grid.total());
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, grid.total() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::sort(idx.begin(), idx.begin() + n);
  MixPlan plan;
  plan.strategy = MixStrategy::CutMix;
  plan.rule = MixRule::Random;
  plan.n = n;
  plan.grid = grid;
  for (int i = 0; i < n; ++i) plan.pairs.push_back({idx[i], idx[i]});
  return transplant(original, auxiliary, std::move(plan));
}

MixPlan umix_plan(std::span<const double> original_scores, std::span<const double> auxiliary_scores, int n,
                  const PatchGrid& grid) {
  return ranked_plan(MixStrategy::UMix, MixRule::LowFromHigh, original_scores, auxiliary_scores, n, grid);
}

MixPlan iumix_plan(std::span<const double> original_scores, std::span<const double> auxiliary_scores, int n,
                   const PatchGrid& grid) {
  return ranked_plan(MixStrategy::IUMix, MixRule::HighFromLow, original_scores, auxiliary_scores, n, grid);
}

MixedSample umix(const MixSource& original, const MixSource& auxiliary, int n, const PatchGrid& grid) {
  check_sources(original, auxiliary, grid);
  const auto so = patch_scores(original.confidence, grid);
  const auto sa = patch_scores(auxiliary.confidence, grid);
  return transplant(original, auxiliary, umix_plan(so, sa, n, grid));
}

MixedSample iumix(const MixSource& original, const MixSource& auxiliary, int n, const PatchGrid& grid) {
  check_sources(original, auxiliary, grid);
  const auto so = patch_scores(original.confidence, grid);
  const auto sa = patch_scores(auxiliary.confidence, grid);
  return transplant(original, auxiliary, iumix_plan(so, sa, n, grid));
}

MixedSample adamix_with_state(const MixSource& original, const MixSource& auxiliary, const SelfPacedState& state,
                              const PatchGrid& grid) {
  check_sources(original, auxiliary, grid);
  const auto so = patch_scores(original.confidence, grid);
  const auto sa = patch_scores(auxiliary.confidence, grid);
  MixPlan plan = ranked_plan(MixStrategy::AdaMix, mix_rule(state.mask), so, sa, state.n, grid);
  plan.self_paced = state;
  return transplant(original, auxiliary, std::move(plan));
}

MixedSample adamix_from_predictions(const Image& original_image, const LabelMap& original_label,
                                    const Logits<float>& original_pred, const Image& auxiliary_image,
                                    const LabelMap& auxiliary_label, const Logits<float>& auxiliary_pred,
                                    double lambda, int max_patches, const PatchGrid& grid) {
  if (max_patches < 0) throw PreconditionError("adamix: K must be non-negative");
  MixSource o{original_image, original_label, pseudo_label(softmax_probs(original_pred)).confidence};
  MixSource a{auxiliary_image, auxiliary_label, pseudo_label(softmax_probs(auxiliary_pred)).confidence};
  const double lbar = proxy_loss(original_pred, original_label, auxiliary_pred, auxiliary_label);
  return adamix_with_state(o, a, self_paced_state(lbar, lambda, max_patches), grid);
}

MixedSample adamix(const Image& original_image, const LabelMap& original_label, const Image& auxiliary_image,
                   const LabelMap& auxiliary_label, const ModelParams<float>& model, const AgeSchedule& schedule,
                   std::int64_t t, int max_patches, int patch_size) {
  const PatchGrid grid(original_image.height(), original_image.width(), patch_size);
  const double lambda = age_lambda(t, schedule);
  const Image pair[2] = {original_image, auxiliary_image};
  const auto preds = forward_batch(model, std::span<const Image>(pair, 2));
  return adamix_from_predictions(original_image, original_label, preds[0], auxiliary_image, auxiliary_label, preds[1],
                                 lambda, max_patches, grid);
}

}  // namespace adamix
