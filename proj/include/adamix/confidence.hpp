#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "adamix/tensor.hpp"

namespace adamix {

/// Numerically stable per-pixel softmax over the channel axis.
ProbMap softmax_probs(const Logits<float>& logits);

struct PseudoLabels {
  LabelMap labels;
  ConfidenceMap confidence;
};

/// Per-pixel argmax (ties go to the lowest class index) and max probability.
PseudoLabels pseudo_label(const ProbMap& probs);

/// Square patch tiling of an image, indexed row-major.
class PatchGrid {
 public:
  struct Rect {
    int y0, x0, y1, x1;  // half-open
  };

  PatchGrid() = default;
  PatchGrid(int height, int width, int patch_size);

  int patch_size() const { return patch_size_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int total() const { return rows_ * cols_; }
  int height() const { return rows_ * patch_size_; }
  int width() const { return cols_ * patch_size_; }

  Rect rect(int index) const;
  /// Patch index containing pixel (y, x).
  int patch_of(int y, int x) const { return (y / patch_size_) * cols_ + x / patch_size_; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

 private:
  int patch_size_ = 1;
  int rows_ = 0;
  int cols_ = 0;
};

/// Mean confidence inside each patch.
std::vector<double> patch_scores(const ConfidenceMap& conf, const PatchGrid& grid);

enum class RankOrder { HighestFirst, LowestFirst };

struct RankedPatch {
  int index;
  double score;
  friend bool operator==(const RankedPatch&, const RankedPatch&) = default;
};

using PatchRanking = std::vector<RankedPatch>;

/// Stable sort of patches by score; equal scores keep ascending patch index.
PatchRanking rank_patches(std::span<const double> scores, RankOrder order);

}  // namespace adamix
