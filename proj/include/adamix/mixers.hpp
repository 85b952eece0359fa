#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "adamix/confidence.hpp"
#include "adamix/segmodel.hpp"
#include "adamix/selfpaced.hpp"
#include "adamix/tensor.hpp"

namespace adamix {

enum class MixStrategy { CutMix, UMix, IUMix, AdaMix };

std::string_view to_string(MixStrategy s);
std::string_view to_string(MixRule r);
MixStrategy parse_mix_strategy(std::string_view name);

struct PatchPair {
  int dst;  ///< patch index in the original
  int src;  ///< patch index in the auxiliary
  friend bool operator==(const PatchPair&, const PatchPair&) = default;
};

/// Fully resolved description of one mix-up.
struct MixPlan {
  MixStrategy strategy = MixStrategy::CutMix;
  MixRule rule = MixRule::Random;
  int n = 0;
  std::vector<PatchPair> pairs;
  PatchGrid grid;
  std::optional<SelfPacedState> self_paced;
};

/// Throws PreconditionError unless |pairs| = n <= grid.total with distinct dst and src indices in range.
void validate_plan(const MixPlan& plan);

nlohmann::json to_json(const MixPlan& plan);

/// One side of a mix: image with its (pseudo) label and confidence map.
struct MixSource {
  Image image;
  LabelMap label;
  ConfidenceMap confidence;
};

struct MixedSample {
  Image image;
  LabelMap label;
  ConfidenceMap confidence;
  MixPlan plan;
};

/// Copies each auxiliary src patch (image, label, confidence) into the original's dst patch.
MixedSample transplant(const MixSource& original, const MixSource& auxiliary, MixPlan plan);

/// n distinct positions drawn uniformly; each is replaced by the auxiliary patch at the same position.
MixedSample cutmix(const MixSource& original, const MixSource& auxiliary, int n, const PatchGrid& grid,
                   std::mt19937_64& rng);

/// Plan-only variants over precomputed patch scores.
MixPlan umix_plan(std::span<const double> original_scores, std::span<const double> auxiliary_scores, int n,
                  const PatchGrid& grid);
MixPlan iumix_plan(std::span<const double> original_scores, std::span<const double> auxiliary_scores, int n,
                   const PatchGrid& grid);

/// The n lowest-confidence original patches receive the n highest-confidence auxiliary patches.
MixedSample umix(const MixSource& original, const MixSource& auxiliary, int n, const PatchGrid& grid);

/// The n highest-confidence original patches receive the n lowest-confidence auxiliary patches.
MixedSample iumix(const MixSource& original, const MixSource& auxiliary, int n, const PatchGrid& grid);

/// Mixes with an already-decided self-paced state: LowFromHigh uses the umix
/// selection, HighFromLow the iumix selection, with state.n patches.
MixedSample adamix_with_state(const MixSource& original, const MixSource& auxiliary, const SelfPacedState& state,
                              const PatchGrid& grid);

/// AdaMix from no-grad predictions of the original and auxiliary images.
/// Labels are ground truth (labeled data) or pseudo labels (unlabeled data).
MixedSample adamix_from_predictions(const Image& original_image, const LabelMap& original_label,
                                    const Logits<float>& original_pred, const Image& auxiliary_image,
                                    const LabelMap& auxiliary_label, const Logits<float>& auxiliary_pred,
                                    double lambda, int max_patches, const PatchGrid& grid);

/// End-to-end AdaMix: forward both images through the model, derive confidences
/// and proxy loss, solve the self-paced mask and weight, then mix.
MixedSample adamix(const Image& original_image, const LabelMap& original_label, const Image& auxiliary_image,
                   const LabelMap& auxiliary_label, const ModelParams<float>& model, const AgeSchedule& schedule,
                   std::int64_t t, int max_patches, int patch_size);

}  // namespace adamix
