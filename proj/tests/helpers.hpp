#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "adamix/tensor.hpp"

namespace adamix::testing {

inline Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(1, h, w);
  for (float& v : img.data()) v = u(rng);
  return img;
}

inline LabelMap random_labels(int h, int w, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  LabelMap l(1, h, w);
  for (auto& v : l.data()) v = static_cast<std::uint8_t>(u(rng));
  return l;
}

inline ConfidenceMap random_confidence(int h, int w, std::mt19937_64& rng, float lo = 1.0f / 3.0f) {
  std::uniform_real_distribution<float> u(lo, 1.0f);
  ConfidenceMap c(1, h, w);
  for (float& v : c.data()) v = u(rng);
  return c;
}

template <typename T>
Logits<T> random_logits(int classes, int h, int w, std::mt19937_64& rng, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  Logits<T> l(classes, h, w);
  for (T& v : l.data()) v = static_cast<T>(n(rng));
  return l;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("adamix_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace adamix::testing
