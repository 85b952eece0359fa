#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "adamix/tensor.hpp"

namespace adamix {

/// Flips followed by a counter-clockwise rotation of rot90 quarter turns.
struct GeometricTransform {
  bool flip_h = false;
  bool flip_v = false;
  int rot90 = 0;

  bool is_identity() const { return !flip_h && !flip_v && rot90 % 4 == 0; }
};

GeometricTransform sample_geometric(std::mt19937_64& rng);

template <typename Map>
Map apply_geometric(const Map& in, const GeometricTransform& t) {
  Map cur = in;
  const int h = in.height();
  const int w = in.width();
  if (t.flip_h || t.flip_v) {
    Map out(in.channels(), h, w);
    for (int c = 0; c < in.channels(); ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          out(c, y, x) = cur(c, t.flip_v ? h - 1 - y : y, t.flip_h ? w - 1 - x : x);
        }
      }
    }
    cur = std::move(out);
  }
  const int turns = ((t.rot90 % 4) + 4) % 4;
  for (int k = 0; k < turns; ++k) {
    const int ch = cur.height();
    const int cw = cur.width();
    Map out(cur.channels(), cw, ch);
    for (int c = 0; c < cur.channels(); ++c) {
      for (int y = 0; y < cw; ++y) {
        for (int x = 0; x < ch; ++x) out(c, y, x) = cur(c, x, cw - 1 - y);
      }
    }
    cur = std::move(out);
  }
  return cur;
}

/// Brightness shift, contrast scale around the image mean, additive Gaussian noise.
struct PhotometricTransform {
  double brightness = 0.0;
  double contrast = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

inline constexpr double kMaxJitter = 0.2;
inline constexpr double kMaxNoiseSigma = 0.05;

PhotometricTransform sample_photometric(std::mt19937_64& rng);

/// Applies the transform and clips to [0, 1].
Image apply_photometric(const Image& image, const PhotometricTransform& t);

struct WeakView {
  Image image;
  std::optional<LabelMap> label;
  GeometricTransform transform;
};

/// Geometric-only ("weak") augmentation; the label, if any, moves with the image.
WeakView weak_aug(const Image& image, const LabelMap* label, std::mt19937_64& rng);

/// Pixel-level part of the strong augmentation, applied on top of a weak view.
Image strong_aug_pixel(const Image& image, std::mt19937_64& rng);

}  // namespace adamix
