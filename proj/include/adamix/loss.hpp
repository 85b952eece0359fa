#pragma once

#include <cstddef>

#include "adamix/tensor.hpp"

namespace adamix {

/// Soft-Dice smoothing constant.
inline constexpr double kDiceSmooth = 1e-5;

struct SegLossTerms {
  double total = 0.0;  ///< 0.5 * ce + 0.5 * dice
  double ce = 0.0;     ///< mean cross-entropy over selected pixels
  double dice = 0.0;   ///< 1 - mean soft Dice over classes present in the selected target pixels
  std::size_t pixels = 0;
};

/// CE + soft-Dice segmentation loss of one sample. When `mask` is given only
/// pixels with mask != 0 take part; an empty selection yields zero loss.
template <typename T>
SegLossTerms seg_loss(const Logits<T>& logits, const LabelMap& target, const BinaryMask* mask = nullptr);

/// Same loss plus dLoss/dLogits, multiplied by `scale`.
template <typename T>
SegLossTerms seg_loss_grad(const Logits<T>& logits, const LabelMap& target, const BinaryMask* mask,
                           double scale, Logits<T>& grad);

/// Indicator of pixels whose confidence reaches the threshold.
BinaryMask confidence_mask(const ConfidenceMap& conf, double tau);

/// seg_loss restricted to pixels with confidence >= tau.
SegLossTerms unsup_loss(const Logits<float>& logits, const LabelMap& pseudo, const ConfidenceMap& conf, double tau);

}  // namespace adamix
