#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adamix/tensor.hpp"

namespace adamix {

/// Shape of the two-level encoder-decoder. Channel widths are
/// {base_width, 2*base_width, 4*base_width} with skip connections at each level.
struct ArchitectureConfig {
  int in_channels = 1;
  int classes = 3;
  int base_width = 16;

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

/// Spatial dims must be multiples of this (two 2x2 poolings).
inline constexpr int kTotalDownsampling = 4;
inline constexpr std::string_view kArchitectureId = "adamix-unet2";

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// Ordered parameter layout for an architecture; identical configs give identical layouts.
std::vector<ParamInfo> parameter_layout(const ArchitectureConfig& arch);

/// Flat, named parameter storage. Gradients use the same type and layout.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ArchitectureConfig& arch);

  const ArchitectureConfig& arch() const { return arch_; }
  std::span<const ParamInfo> layout() const { return *layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  std::span<T> tensor(std::size_t index);
  std::span<const T> tensor(std::size_t index) const;
  std::span<T> tensor(std::string_view name);
  std::span<const T> tensor(std::string_view name) const;

  /// True when both sets belong to the same architecture (element-wise combinable).
  bool compatible(const ModelParams& other) const {
    return arch_ == other.arch_ && values_.size() == other.values_.size();
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out(arch_);
    auto dst = out.values();
    for (std::size_t i = 0; i < values_.size(); ++i) dst[i] = static_cast<U>(values_[i]);
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.arch_ == b.arch_ && a.values_ == b.values_;
  }

 private:
  std::size_t find(std::string_view name) const;

  ArchitectureConfig arch_{};
  std::shared_ptr<const std::vector<ParamInfo>> layout_ = std::make_shared<std::vector<ParamInfo>>();
  std::vector<T> values_;
};

/// He (fan-in) normal initialization for weights, zero biases.
template <typename T>
ModelParams<T> init_params(const ArchitectureConfig& arch, std::uint64_t seed);

/// Throws ShapeError unless the image fits the architecture.
void check_input_shape(const ArchitectureConfig& arch, const Image& image);

template <typename T>
Logits<T> forward(const ModelParams<T>& model, const Image& image);

/// Batched inference. Every image must share one spatial shape.
template <typename T>
std::vector<Logits<T>> forward_batch(const ModelParams<T>& model, std::span<const Image> images);

/// Activations retained by a training forward pass for the backward pass.
template <typename T>
class ForwardTape {
 public:
  struct State;

  ForwardTape();
  explicit ForwardTape(std::unique_ptr<State> state);
  ForwardTape(ForwardTape&&) noexcept;
  ForwardTape& operator=(ForwardTape&&) noexcept;
  ~ForwardTape();

  const State& state() const { return *state_; }

 private:
  std::unique_ptr<State> state_;
};

template <typename T>
struct TrainingForward {
  std::vector<Logits<T>> logits;
  ForwardTape<T> tape;
};

template <typename T>
TrainingForward<T> forward_train(const ModelParams<T>& model, std::span<const Image> images);

/// Gradient of a scalar loss w.r.t. all parameters, given dLoss/dLogits per sample.
template <typename T>
ModelParams<T> backward(const ModelParams<T>& model, const ForwardTape<T>& tape,
                        std::span<const Logits<T>> grad_logits);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(const ModelParams<float>& params, AdamWConfig config);

  const AdamWConfig& config() const { return config_; }
  std::int64_t step() const { return step_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

  friend void optimizer_step(OptimizerState& state, ModelParams<float>& params,
                             const ModelParams<float>& grads);

 private:
  AdamWConfig config_{};
  std::int64_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// One AdamW update with decoupled weight decay; increments the step counter.
void optimizer_step(OptimizerState& state, ModelParams<float>& params, const ModelParams<float>& grads);

/// teacher' = alpha * teacher + (1 - alpha) * student, element-wise.
ModelParams<float> ema_update(const ModelParams<float>& teacher, const ModelParams<float>& student,
                              double alpha);

// ---------------------------------------------------------------------------
// Gradient verification

struct LossAndGrad {
  double value = 0.0;
  std::vector<Logits<double>> grad;
};

using BatchLossFn = std::function<LossAndGrad(const std::vector<Logits<double>>&)>;

struct GradientCheckOptions {
  double epsilon = 1e-5;
  int samples_per_tensor = 6;
  std::uint64_t seed = 0;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
  /// Probes whose +-epsilon step flips a ReLU or max-pool switch; the central
  /// difference is not a derivative there, so they are excluded from the error.
  std::size_t kink_crossings = 0;
};

/// Compares backprop gradients with central differences on a sampled subset of
/// parameters (every tensor contributes samples_per_tensor entries).
/// Each probe reruns the training forward pass to detect kink crossings.
/// Relative error is |a - n| / (|a| + |n| + 1e-12).
GradientCheckResult gradient_check(const ModelParams<double>& model, std::span<const Image> batch,
                                   const BatchLossFn& loss_fn, const GradientCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

/// Layout: "ADMXCKPT" magic, u64 LE header length, JSON header, then the
/// tensors as contiguous little-endian float32 in layout order.
void save_checkpoint(const std::string& path, const ModelParams<float>& params, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace adamix
