#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adamix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when two tensors (or a tensor and a layout) disagree on shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an argument violates an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Raised for malformed or inconsistent files and documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dense channel-major (C, H, W) array. The tag parameter keeps images,
/// label maps, confidence maps and logits from being mixed up at compile time.
template <typename T, typename Tag>
class Tensor3 {
 public:
  using value_type = T;

  Tensor3() = default;

  Tensor3(int channels, int height, int width, T fill = T{})
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw ShapeError("negative tensor dimension");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  Tensor3(int channels, int height, int width, std::vector<T> data)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
      throw ShapeError("tensor data size does not match its shape");
    }
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  /// Channel-0 accessors for single-plane maps.
  T& at(int y, int x) { return data_[index(0, y, x)]; }
  const T& at(int y, int x) const { return data_[index(0, y, x)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::span<T> plane(int c) { return std::span<T>(data_).subspan(c * plane_size(), plane_size()); }
  std::span<const T> plane(int c) const {
    return std::span<const T>(data_).subspan(c * plane_size(), plane_size());
  }

  template <typename OtherTag, typename U>
  bool same_spatial(const Tensor3<U, OtherTag>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

struct ImageTag {};
struct LabelTag {};
struct ConfidenceTag {};
struct ProbTag {};
struct LogitsTag {};
struct MaskTag {};

/// Single-channel intensity image with values in [0, 1].
using Image = Tensor3<float, ImageTag>;
/// Per-pixel class indices.
using LabelMap = Tensor3<std::uint8_t, LabelTag>;
/// Per-pixel maximum softmax probability.
using ConfidenceMap = Tensor3<float, ConfidenceTag>;
/// Per-pixel class probabilities, (C, H, W).
using ProbMap = Tensor3<float, ProbTag>;
/// Binary {0,1} pixel mask.
using BinaryMask = Tensor3<std::uint8_t, MaskTag>;
/// Raw network outputs, (C, H, W).
template <typename T>
using Logits = Tensor3<T, LogitsTag>;

/// Builds a single-channel map of the given spatial size.
template <typename Map>
Map make_plane(int height, int width, typename Map::value_type fill = {}) {
  return Map(1, height, width, fill);
}

template <typename A, typename B>
void require_same_spatial(const A& a, const B& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": spatial shapes differ (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

}  // namespace adamix
