#include "adamix/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace adamix {

ProbMap softmax_probs(const Logits<float>& logits) {
  const int classes = logits.channels();
  if (classes < 1) throw ShapeError("softmax_probs: logits have no channels");
  ProbMap probs(classes, logits.height(), logits.width());
  const std::size_t n = logits.plane_size();
  std::vector<double> e(classes);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (int c = 0; c < classes; ++c) {
      const float v = logits.plane(c)[i];
      if (!std::isfinite(v)) throw PreconditionError("softmax_probs: non-finite logit");
      mx = std::max(mx, static_cast<double>(v));
    }
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      e[c] = std::exp(static_cast<double>(logits.plane(c)[i]) - mx);
      sum += e[c];
    }
    for (int c = 0; c < classes; ++c) probs.plane(c)[i] = static_cast<float>(e[c] / sum);
  }
  return probs;
}

PseudoLabels pseudo_label(const ProbMap& probs) {
  const int classes = probs.channels();
  if (classes < 1) throw ShapeError("pseudo_label: probability map has no channels");
  PseudoLabels out{make_plane<LabelMap>(probs.height(), probs.width()),
                   make_plane<ConfidenceMap>(probs.height(), probs.width())};
  auto labels = out.labels.data();
  auto conf = out.confidence.data();
  for (std::size_t i = 0; i < probs.plane_size(); ++i) {
    int best = 0;
    float best_p = probs.plane(0)[i];
    for (int c = 1; c < classes; ++c) {
      if (probs.plane(c)[i] > best_p) {
        best = c;
        best_p = probs.plane(c)[i];
      }
    }
    labels[i] = static_cast<std::uint8_t>(best);
    conf[i] = best_p;
  }
  return out;
}

PatchGrid::PatchGrid(int height, int width, int patch_size) : patch_size_(patch_size) {
  if (patch_size < 1) throw PreconditionError("PatchGrid: patch size must be positive");
  if (height <= 0 || width <= 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("PatchGrid: " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not tiled by patch size " + std::to_string(patch_size));
  }
  rows_ = height / patch_size;
  cols_ = width / patch_size;
}

PatchGrid::Rect PatchGrid::rect(int index) const {
  if (index < 0 || index >= total()) {
    throw PreconditionError("PatchGrid: patch index " + std::to_string(index) + " out of range");
  }
  const int r = index / cols_;
  const int c = index % cols_;
  return {r * patch_size_, c * patch_size_, (r + 1) * patch_size_, (c + 1) * patch_size_};
}

std::vector<double> patch_scores(const ConfidenceMap& conf, const PatchGrid& grid) {
  if (conf.height() != grid.height() || conf.width() != grid.width()) {
    throw ShapeError("patch_scores: grid does not match confidence map dimensions");
  }
  std::vector<double> sums(grid.total(), 0.0);
  for (int y = 0; y < conf.height(); ++y) {
    for (int x = 0; x < conf.width(); ++x) sums[grid.patch_of(y, x)] += conf.at(y, x);
  }
  const double area = static_cast<double>(grid.patch_size()) * grid.patch_size();
  for (double& s : sums) s /= area;
  return sums;
}

PatchRanking rank_patches(std::span<const double> scores, RankOrder order) {
  if (scores.empty()) throw PreconditionError("rank_patches: empty score list");
  PatchRanking ranking;
  ranking.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) ranking.push_back({static_cast<int>(i), scores[i]});
  if (order == RankOrder::HighestFirst) {
    std::stable_sort(ranking.begin(), ranking.end(),
                     [](const RankedPatch& a, const RankedPatch& b) { return a.score > b.score; });
  } else {
    std::stable_sort(ranking.begin(), ranking.end(),
                     [](const RankedPatch& a, const RankedPatch& b) { return a.score < b.score; });
  }
  return ranking;
}

}  // namespace adamix
