#include "adamix/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace adamix {

namespace {

template <typename T>
SegLossTerms seg_loss_impl(const Logits<T>& logits, const LabelMap& target, const BinaryMask* mask, double scale,
                           Logits<T>* grad) {
  require_same_spatial(logits, target, "seg_loss");
  if (mask) require_same_spatial(logits, *mask, "seg_loss mask");
  const int classes = logits.channels();
  const std::size_t n = logits.plane_size();
  auto labels = target.data();

  std::vector<double> probs(static_cast<std::size_t>(classes) * n);
  std::size_t selected = 0;
  double ce_sum = 0.0;
  std::vector<double> inter(classes, 0.0), psum(classes, 0.0), gsum(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && mask->data()[i] == 0) continue;
    const int y = labels[i];
    if (y >= classes) throw PreconditionError("seg_loss: label exceeds class count");
    double mx = static_cast<double>(logits.plane(0)[i]);
    for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits.plane(c)[i]));
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double e = std::exp(static_cast<double>(logits.plane(c)[i]) - mx);
      probs[c * n + i] = e;
      sum += e;
    }
    for (int c = 0; c < classes; ++c) {
      const double p = probs[c * n + i] / sum;
      probs[c * n + i] = p;
      psum[c] += p;
    }
    inter[y] += probs[y * n + i];
    gsum[y] += 1.0;
    ce_sum -= static_cast<double>(logits.plane(y)[i]) - mx - std::log(sum);
    ++selected;
  }

  if (grad) *grad = Logits<T>(classes, logits.height(), logits.width());
  SegLossTerms terms;
  terms.pixels = selected;
  if (selected == 0) return terms;

  int present = 0;
  double dice_sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    if (gsum[c] > 0.0) {
      ++present;
      dice_sum += (2.0 * inter[c] + kDiceSmooth) / (psum[c] + gsum[c] + kDiceSmooth);
    }
  }
  const double m = static_cast<double>(selected);
  terms.ce = ce_sum / m;
  terms.dice = 1.0 - dice_sum / present;
  terms.total = 0.5 * terms.ce + 0.5 * terms.dice;
  if (!grad) return terms;

  // dDiceLoss/dp_c(i) = -(1/present) * (2 y_c(i) D_c - (2 I_c + s)) / D_c^2, D_c = P_c + G_c + s
  std::vector<double> coef_a(classes, 0.0), coef_b(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    if (gsum[c] <= 0.0) continue;
    const double d = psum[c] + gsum[c] + kDiceSmooth;
    coef_a[c] = -0.5 / present * 2.0 / d;                                   // applies when y == c
    coef_b[c] = 0.5 / present * (2.0 * inter[c] + kDiceSmooth) / (d * d);  // applies always
  }
  std::vector<double> g(classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && mask->data()[i] == 0) continue;
    const int y = labels[i];
    double gp = 0.0;
    for (int c = 0; c < classes; ++c) {
      g[c] = coef_b[c] + (c == y ? coef_a[c] : 0.0);
      gp += g[c] * probs[c * n + i];
    }
    for (int c = 0; c < classes; ++c) {
      const double p = probs[c * n + i];
      const double dz = p * (g[c] - gp) + 0.5 * (p - (c == y ? 1.0 : 0.0)) / m;
      grad->plane(c)[i] = static_cast<T>(scale * dz);
    }
  }
  return terms;
}

}  // namespace

template <typename T>
SegLossTerms seg_loss(const Logits<T>& logits, const LabelMap& target, const BinaryMask* mask) {
  return seg_loss_impl<T>(logits, target, mask, 1.0, nullptr);
}

template <typename T>
SegLossTerms seg_loss_grad(const Logits<T>& logits, const LabelMap& target, const BinaryMask* mask, double scale,
                           Logits<T>& grad) {
  return seg_loss_impl<T>(logits, target, mask, scale, &grad);
}

BinaryMask confidence_mask(const ConfidenceMap& conf, double tau) {
  BinaryMask mask = make_plane<BinaryMask>(conf.height(), conf.width());
  auto src = conf.data();
  auto dst = mask.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= tau ? 1 : 0;
  return mask;
}

SegLossTerms unsup_loss(const Logits<float>& logits, const LabelMap& pseudo, const ConfidenceMap& conf, double tau) {
  require_same_spatial(logits, conf, "unsup_loss");
  const BinaryMask mask = confidence_mask(conf, tau);
  return seg_loss(logits, pseudo, &mask);
}

template SegLossTerms seg_loss<float>(const Logits<float>&, const LabelMap&, const BinaryMask*);
template SegLossTerms seg_loss<double>(const Logits<double>&, const LabelMap&, const BinaryMask*);
template SegLossTerms seg_loss_grad<float>(const Logits<float>&, const LabelMap&, const BinaryMask*, double,
                                           Logits<float>&);
template SegLossTerms seg_loss_grad<double>(const Logits<double>&, const LabelMap&, const BinaryMask*, double,
                                            Logits<double>&);

}  // namespace adamix
