#include "adamix/augment.hpp"

#include <algorithm>

namespace adamix {

GeometricTransform sample_geometric(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> quarter(0, 3);
  GeometricTransform t;
  t.flip_h = coin(rng);
  t.flip_v = coin(rng);
  t.rot90 = quarter(rng);
  return t;
}

PhotometricTransform sample_photometric(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-kMaxJitter, kMaxJitter);
  std::uniform_real_distribution<double> sigma(0.0, kMaxNoiseSigma);
  PhotometricTransform t;
  t.brightness = jitter(rng);
  t.contrast = 1.0 + jitter(rng);
  t.noise_sigma = sigma(rng);
  t.noise_seed = rng();
  return t;
}

Image apply_photometric(const Image& image, const PhotometricTransform& t) {
  Image out = image;
  auto px = out.data();
  if (px.empty()) return out;
  double mean = 0.0;
  for (float v : px) mean += v;
  mean /= static_cast<double>(px.size());
  std::mt19937_64 noise_rng(t.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool noisy = t.noise_sigma > 0.0;
  for (float& v : px) {
    double x = (v - mean) * t.contrast + mean + t.brightness;
    if (noisy) x += t.noise_sigma * noise(noise_rng);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

WeakView weak_aug(const Image& image, const LabelMap* label, std::mt19937_64& rng) {
  WeakView view;
  view.transform = sample_geometric(rng);
  view.image = apply_geometric(image, view.transform);
  if (label) {
    require_same_spatial(image, *label, "weak_aug");
    view.label = apply_geometric(*label, view.transform);
  }
  return view;
}

Image strong_aug_pixel(const Image& image, std::mt19937_64& rng) {
  return apply_photometric(image, sample_photometric(rng));
}

}  // namespace adamix
