#include "adamix/segmodel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>

namespace adamix {

namespace {

enum class LayerKind { Conv3, UpConv2, Conv1 };

struct LayerDef {
  const char* name;
  LayerKind kind;
  int in;
  int out;
};

// Layer order is the parameter order: weight then bias for each entry.
enum LayerId : int {
  kEnc1a, kEnc1b, kEnc2a, kEnc2b, kBotA, kBotB, kUp2, kDec2a, kDec2b, kUp1, kDec1a, kDec1b, kHead, kNumLayers
};

std::vector<LayerDef> layer_defs(const ArchitectureConfig& a) {
  const int w = a.base_width;
  return {
      {"enc1a", LayerKind::Conv3, a.in_channels, w},
      {"enc1b", LayerKind::Conv3, w, w},
      {"enc2a", LayerKind::Conv3, w, 2 * w},
      {"enc2b", LayerKind::Conv3, 2 * w, 2 * w},
      {"bottleneck_a", LayerKind::Conv3, 2 * w, 4 * w},
      {"bottleneck_b", LayerKind::Conv3, 4 * w, 4 * w},
      {"up2", LayerKind::UpConv2, 4 * w, 2 * w},
      {"dec2a", LayerKind::Conv3, 4 * w, 2 * w},
      {"dec2b", LayerKind::Conv3, 2 * w, 2 * w},
      {"up1", LayerKind::UpConv2, 2 * w, w},
      {"dec1a", LayerKind::Conv3, 2 * w, w},
      {"dec1b", LayerKind::Conv3, w, w},
      {"head", LayerKind::Conv1, w, a.classes},
  };
}

int fan_in(const LayerDef& d) {
  switch (d.kind) {
    case LayerKind::Conv3:
      return d.in * 9;
    case LayerKind::UpConv2:
    case LayerKind::Conv1:
      return d.in;
  }
  return d.in;
}

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Activations are stored as (channels, batch*height*width) row-major matrices.
struct Geo {
  int batch = 0;
  int h = 0;
  int w = 0;
  Eigen::Index hw() const { return static_cast<Eigen::Index>(h) * w; }
  Eigen::Index n() const { return batch * hw(); }
  Geo half() const { return {batch, h / 2, w / 2}; }
};

// Weight matrix views. Conv3: (out, in*9). UpConv2: (4*out, in). Conv1: (out, in).
template <typename T>
CMatMap<T> wmat(const ModelParams<T>& p, const LayerDef& d, int layer) {
  const ParamInfo& info = p.layout()[2 * layer];
  const T* ptr = p.values().data() + info.offset;
  switch (d.kind) {
    case LayerKind::Conv3:
      return CMatMap<T>(ptr, d.out, d.in * 9);
    case LayerKind::UpConv2:
      return CMatMap<T>(ptr, 4 * d.out, d.in);
    case LayerKind::Conv1:
      break;
  }
  return CMatMap<T>(ptr, d.out, d.in);
}

template <typename T>
MatMap<T> wmat_mut(ModelParams<T>& p, const LayerDef& d, int layer) {
  const ParamInfo& info = p.layout()[2 * layer];
  T* ptr = p.values().data() + info.offset;
  switch (d.kind) {
    case LayerKind::Conv3:
      return MatMap<T>(ptr, d.out, d.in * 9);
    case LayerKind::UpConv2:
      return MatMap<T>(ptr, 4 * d.out, d.in);
    case LayerKind::Conv1:
      break;
  }
  return MatMap<T>(ptr, d.out, d.in);
}

template <typename T>
CVecMap<T> bias(const ModelParams<T>& p, int layer) {
  const ParamInfo& info = p.layout()[2 * layer + 1];
  return CVecMap<T>(p.values().data() + info.offset, static_cast<Eigen::Index>(info.count));
}

template <typename T>
VecMap<T> bias_mut(ModelParams<T>& p, int layer) {
  const ParamInfo& info = p.layout()[2 * layer + 1];
  return VecMap<T>(p.values().data() + info.offset, static_cast<Eigen::Index>(info.count));
}

template <typename T>
Mat<T> im2col(const Mat<T>& in, const Geo& g) {
  const Eigen::Index cin = in.rows();
  Mat<T> cols(cin * 9, g.n());
  for (Eigen::Index ci = 0; ci < cin; ++ci) {
    const T* src = in.row(ci).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.row(ci * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(g.w, g.w - dx);
        for (int b = 0; b < g.batch; ++b) {
          for (int y = 0; y < g.h; ++y) {
            T* row = dst + b * g.hw() + static_cast<Eigen::Index>(y) * g.w;
            const int sy = y + dy;
            if (sy < 0 || sy >= g.h) {
              std::fill(row, row + g.w, T(0));
              continue;
            }
            const T* srow = src + b * g.hw() + static_cast<Eigen::Index>(sy) * g.w + dx;
            if (x0 > 0) row[0] = T(0);
            if (x1 < g.w) row[g.w - 1] = T(0);
            std::copy(srow + x0, srow + x1, row + x0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_add(const Mat<T>& cols, const Geo& g, Mat<T>& din) {
  const Eigen::Index cin = din.rows();
  for (Eigen::Index ci = 0; ci < cin; ++ci) {
    T* dst = din.row(ci).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.row(ci * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(g.w, g.w - dx);
        for (int b = 0; b < g.batch; ++b) {
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= g.h) continue;
            const T* row = src + b * g.hw() + static_cast<Eigen::Index>(y) * g.w;
            T* drow = dst + b * g.hw() + static_cast<Eigen::Index>(sy) * g.w + dx;
            for (int x = x0; x < x1; ++x) drow[x] += row[x];
          }
        }
      }
    }
  }
}

// Products run one sample at a time so a sample's activations do not depend on
// what else is in the batch (GEMM blocking varies with the column count).
template <typename T, typename Lhs, typename Rhs>
void per_sample_product(const Lhs& lhs, const Rhs& rhs, Eigen::Index hw, Mat<T>& out) {
  for (Eigen::Index c0 = 0; c0 < rhs.cols(); c0 += hw) {
    out.middleCols(c0, hw).noalias() = lhs * rhs.middleCols(c0, hw);
  }
}

template <typename T>
Mat<T> conv3(const ModelParams<T>& p, const LayerDef& d, int layer, const Mat<T>& in, const Geo& g) {
  Mat<T> cols = im2col(in, g);
  Mat<T> out(d.out, g.n());
  per_sample_product<T>(wmat(p, d, layer), cols, g.hw(), out);
  out.colwise() += bias(p, layer);
  return out;
}

template <typename T>
void relu_inplace(Mat<T>& m) {
  m = m.cwiseMax(T(0));
}

template <typename T>
Mat<T> maxpool2(const Mat<T>& in, const Geo& g, std::vector<std::int32_t>& argmax) {
  const Geo o = g.half();
  Mat<T> out(in.rows(), o.n());
  argmax.resize(static_cast<std::size_t>(in.rows() * o.n()));
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const T* src = in.row(c).data();
    T* dst = out.row(c).data();
    std::int32_t* idx = argmax.data() + c * o.n();
    for (int b = 0; b < g.batch; ++b) {
      for (int y = 0; y < o.h; ++y) {
        for (int x = 0; x < o.w; ++x) {
          const Eigen::Index base = b * g.hw() + static_cast<Eigen::Index>(2 * y) * g.w + 2 * x;
          Eigen::Index best = base;
          const Eigen::Index cand[3] = {base + 1, base + g.w, base + g.w + 1};
          for (Eigen::Index k : cand) {
            if (src[k] > src[best]) best = k;
          }
          const Eigen::Index j = b * o.hw() + static_cast<Eigen::Index>(y) * o.w + x;
          dst[j] = src[best];
          idx[j] = static_cast<std::int32_t>(best);
        }
      }
    }
  }
  return out;
}

template <typename T>
void maxpool2_backward_add(const Mat<T>& dout, const std::vector<std::int32_t>& argmax, Mat<T>& din) {
  for (Eigen::Index c = 0; c < dout.rows(); ++c) {
    const T* src = dout.row(c).data();
    T* dst = din.row(c).data();
    const std::int32_t* idx = argmax.data() + c * dout.cols();
    for (Eigen::Index j = 0; j < dout.cols(); ++j) dst[idx[j]] += src[j];
  }
}

// 2x2 stride-2 transposed convolution; `in` lives on grid g, output on 2x grid.
template <typename T>
Mat<T> upconv2(const ModelParams<T>& p, const LayerDef& d, int layer, const Mat<T>& in, const Geo& g) {
  Mat<T> z(4 * d.out, g.n());
  per_sample_product<T>(wmat(p, d, layer), in, g.hw(), z);
  const Geo o{g.batch, 2 * g.h, 2 * g.w};
  Mat<T> out(d.out, o.n());
  const auto bv = bias(p, layer);
  for (int co = 0; co < d.out; ++co) {
    T* dst = out.row(co).data();
    for (int q = 0; q < 4; ++q) {
      const int dy = q / 2;
      const int dx = q % 2;
      const T* src = z.row(q * d.out + co).data();
      for (int b = 0; b < g.batch; ++b) {
        for (int y = 0; y < g.h; ++y) {
          const T* srow = src + b * g.hw() + static_cast<Eigen::Index>(y) * g.w;
          T* drow = dst + b * o.hw() + static_cast<Eigen::Index>(2 * y + dy) * o.w + dx;
          for (int x = 0; x < g.w; ++x) drow[2 * x] = srow[x] + bv[co];
        }
      }
    }
  }
  return out;
}

template <typename T>
Mat<T> vstack(const Mat<T>& top, const Mat<T>& bottom) {
  Mat<T> out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

template <typename T>
Mat<T> images_to_mat(std::span<const Image> images, int channels) {
  const Geo g{static_cast<int>(images.size()), images[0].height(), images[0].width()};
  Mat<T> x(channels, g.n());
  for (int b = 0; b < g.batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      auto plane = images[b].plane(c);
      for (Eigen::Index i = 0; i < g.hw(); ++i) x(c, b * g.hw() + i) = static_cast<T>(plane[i]);
    }
  }
  return x;
}

template <typename T>
std::vector<Logits<T>> mat_to_logits(const Mat<T>& m, const Geo& g) {
  std::vector<Logits<T>> out;
  out.reserve(g.batch);
  for (int b = 0; b < g.batch; ++b) {
    Logits<T> l(static_cast<int>(m.rows()), g.h, g.w);
    for (Eigen::Index c = 0; c < m.rows(); ++c) {
      auto plane = l.plane(static_cast<int>(c));
      const T* src = m.row(c).data() + b * g.hw();
      std::copy(src, src + g.hw(), plane.begin());
    }
    out.push_back(std::move(l));
  }
  return out;
}

Geo check_batch(const ArchitectureConfig& arch, std::span<const Image> images) {
  if (images.empty()) throw PreconditionError("forward: empty batch");
  for (const Image& im : images) {
    check_input_shape(arch, im);
    if (im.height() != images[0].height() || im.width() != images[0].width()) {
      throw ShapeError("forward: batch images differ in spatial shape");
    }
  }
  return {static_cast<int>(images.size()), images[0].height(), images[0].width()};
}

}  // namespace

template <typename T>
struct ForwardTape<T>::State {
  std::vector<LayerDef> defs;
  Geo g0, g1, g2;
  Mat<T> x, e1a, e1b, p1, e2a, e2b, p2, ba, bb, c2, d2a, d2b, c1, d1a, d1b;
  std::vector<std::int32_t> p1_idx, p2_idx;
};

template <typename T>
ForwardTape<T>::ForwardTape() = default;
template <typename T>
ForwardTape<T>::ForwardTape(std::unique_ptr<State> state) : state_(std::move(state)) {}
template <typename T>
ForwardTape<T>::ForwardTape(ForwardTape&&) noexcept = default;
template <typename T>
ForwardTape<T>& ForwardTape<T>::operator=(ForwardTape&&) noexcept = default;
template <typename T>
ForwardTape<T>::~ForwardTape() = default;

std::vector<ParamInfo> parameter_layout(const ArchitectureConfig& arch) {
  if (arch.in_channels < 1 || arch.classes < 2 || arch.base_width < 1) {
    throw PreconditionError("invalid architecture config");
  }
  std::vector<ParamInfo> layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t count = 1;
    for (int s : shape) count *= static_cast<std::size_t>(s);
    layout.push_back({std::move(name), std::move(shape), offset, count});
    offset += count;
  };
  for (const LayerDef& d : layer_defs(arch)) {
    switch (d.kind) {
      case LayerKind::Conv3:
        add(std::string(d.name) + ".weight", {d.out, d.in, 3, 3});
        break;
      case LayerKind::UpConv2:
        add(std::string(d.name) + ".weight", {2, 2, d.out, d.in});
        break;
      case LayerKind::Conv1:
        add(std::string(d.name) + ".weight", {d.out, d.in});
        break;
    }
    add(std::string(d.name) + ".bias", {d.out});
  }
  return layout;
}

template <typename T>
ModelParams<T>::ModelParams(const ArchitectureConfig& arch)
    : arch_(arch), layout_(std::make_shared<std::vector<ParamInfo>>(parameter_layout(arch))) {
  const ParamInfo& last = layout_->back();
  values_.assign(last.offset + last.count, T(0));
}

template <typename T>
std::span<T> ModelParams<T>::tensor(std::size_t index) {
  const ParamInfo& info = layout_->at(index);
  return std::span<T>(values_).subspan(info.offset, info.count);
}

template <typename T>
std::span<const T> ModelParams<T>::tensor(std::size_t index) const {
  const ParamInfo& info = layout_->at(index);
  return std::span<const T>(values_).subspan(info.offset, info.count);
}

template <typename T>
std::size_t ModelParams<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < layout_->size(); ++i) {
    if ((*layout_)[i].name == name) return i;
  }
  throw PreconditionError("unknown parameter tensor: " + std::string(name));
}

template <typename T>
std::span<T> ModelParams<T>::tensor(std::string_view name) {
  return tensor(find(name));
}

template <typename T>
std::span<const T> ModelParams<T>::tensor(std::string_view name) const {
  return tensor(find(name));
}

template <typename T>
ModelParams<T> init_params(const ArchitectureConfig& arch, std::uint64_t seed) {
  ModelParams<T> params(arch);
  std::mt19937_64 rng(seed);
  const auto defs = layer_defs(arch);
  for (std::size_t l = 0; l < defs.size(); ++l) {
    const double stddev = std::sqrt(2.0 / fan_in(defs[l]));
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& w : params.tensor(2 * l)) w = static_cast<T>(dist(rng));
  }
  return params;
}

void check_input_shape(const ArchitectureConfig& arch, const Image& image) {
  if (image.channels() != arch.in_channels) {
    throw ShapeError("forward: expected " + std::to_string(arch.in_channels) + " input channel(s), got " +
                     std::to_string(image.channels()));
  }
  if (image.height() < kTotalDownsampling || image.width() < kTotalDownsampling ||
      image.height() % kTotalDownsampling != 0 || image.width() % kTotalDownsampling != 0) {
    throw ShapeError("forward: spatial dims " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()) + " are not positive multiples of " +
                     std::to_string(kTotalDownsampling));
  }
}

template <typename T>
TrainingForward<T> forward_train(const ModelParams<T>& p, std::span<const Image> images) {
  auto s = std::make_unique<typename ForwardTape<T>::State>();
  s->defs = layer_defs(p.arch());
  const auto& D = s->defs;
  s->g0 = check_batch(p.arch(), images);
  s->g1 = s->g0.half();
  s->g2 = s->g1.half();

  s->x = images_to_mat<T>(images, p.arch().in_channels);
  s->e1a = conv3(p, D[kEnc1a], kEnc1a, s->x, s->g0);
  relu_inplace(s->e1a);
  s->e1b = conv3(p, D[kEnc1b], kEnc1b, s->e1a, s->g0);
  relu_inplace(s->e1b);
  s->p1 = maxpool2(s->e1b, s->g0, s->p1_idx);

  s->e2a = conv3(p, D[kEnc2a], kEnc2a, s->p1, s->g1);
  relu_inplace(s->e2a);
  s->e2b = conv3(p, D[kEnc2b], kEnc2b, s->e2a, s->g1);
  relu_inplace(s->e2b);
  s->p2 = maxpool2(s->e2b, s->g1, s->p2_idx);

  s->ba = conv3(p, D[kBotA], kBotA, s->p2, s->g2);
  relu_inplace(s->ba);
  s->bb = conv3(p, D[kBotB], kBotB, s->ba, s->g2);
  relu_inplace(s->bb);

  s->c2 = vstack(upconv2(p, D[kUp2], kUp2, s->bb, s->g2), s->e2b);
  s->d2a = conv3(p, D[kDec2a], kDec2a, s->c2, s->g1);
  relu_inplace(s->d2a);
  s->d2b = conv3(p, D[kDec2b], kDec2b, s->d2a, s->g1);
  relu_inplace(s->d2b);

  s->c1 = vstack(upconv2(p, D[kUp1], kUp1, s->d2b, s->g1), s->e1b);
  s->d1a = conv3(p, D[kDec1a], kDec1a, s->c1, s->g0);
  relu_inplace(s->d1a);
  s->d1b = conv3(p, D[kDec1b], kDec1b, s->d1a, s->g0);
  relu_inplace(s->d1b);

  Mat<T> logits(D[kHead].out, s->g0.n());
  per_sample_product<T>(wmat(p, D[kHead], kHead), s->d1b, s->g0.hw(), logits);
  logits.colwise() += bias(p, kHead);

  TrainingForward<T> result;
  result.logits = mat_to_logits(logits, s->g0);
  result.tape = ForwardTape<T>(std::move(s));
  return result;
}

template <typename T>
std::vector<Logits<T>> forward_batch(const ModelParams<T>& model, std::span<const Image> images) {
  return forward_train(model, images).logits;
}

template <typename T>
Logits<T> forward(const ModelParams<T>& model, const Image& image) {
  return std::move(forward_batch(model, std::span<const Image>(&image, 1)).front());
}

namespace {

// Accumulates weight/bias gradients of a 3x3 conv and returns dInput (if wanted).
template <typename T>
Mat<T> conv3_backward(const ModelParams<T>& p, ModelParams<T>& grad, const LayerDef& d, int layer,
                      const Mat<T>& in, const Geo& g, const Mat<T>& dout, bool need_input_grad) {
  Mat<T> cols = im2col(in, g);
  wmat_mut(grad, d, layer).noalias() += dout * cols.transpose();
  bias_mut(grad, layer) += dout.rowwise().sum();
  if (!need_input_grad) return {};
  per_sample_product<T>(wmat(p, d, layer).transpose(), dout, g.hw(), cols);
  Mat<T> din = Mat<T>::Zero(in.rows(), in.cols());
  col2im_add(cols, g, din);
  return din;
}

template <typename T>
Mat<T> upconv2_backward(const ModelParams<T>& p, ModelParams<T>& grad, const LayerDef& d, int layer,
                        const Mat<T>& in, const Geo& g, const Mat<T>& dout) {
  const Geo o{g.batch, 2 * g.h, 2 * g.w};
  Mat<T> dz(4 * d.out, g.n());
  auto db = bias_mut(grad, layer);
  for (int co = 0; co < d.out; ++co) {
    const T* src = dout.row(co).data();
    db[co] += dout.row(co).sum();
    for (int q = 0; q < 4; ++q) {
      const int dy = q / 2;
      const int dx = q % 2;
      T* dst = dz.row(q * d.out + co).data();
      for (int b = 0; b < g.batch; ++b) {
        for (int y = 0; y < g.h; ++y) {
          const T* srow = src + b * o.hw() + static_cast<Eigen::Index>(2 * y + dy) * o.w + dx;
          T* drow = dst + b * g.hw() + static_cast<Eigen::Index>(y) * g.w;
          for (int x = 0; x < g.w; ++x) drow[x] = srow[2 * x];
        }
      }
    }
  }
  wmat_mut(grad, d, layer).noalias() += dz * in.transpose();
  Mat<T> din(in.rows(), in.cols());
  per_sample_product<T>(wmat(p, d, layer).transpose(), dz, g.hw(), din);
  return din;
}

template <typename T>
void relu_backward(Mat<T>& d, const Mat<T>& out) {
  d = (out.array() > T(0)).select(d, T(0));
}

}  // namespace

template <typename T>
ModelParams<T> backward(const ModelParams<T>& p, const ForwardTape<T>& tape, std::span<const Logits<T>> grad_logits) {
  const auto& s = tape.state();
  const auto& D = s.defs;
  if (grad_logits.size() != static_cast<std::size_t>(s.g0.batch)) {
    throw ShapeError("backward: gradient batch size does not match the forward pass");
  }
  const int classes = D[kHead].out;
  Mat<T> dl(classes, s.g0.n());
  for (int b = 0; b < s.g0.batch; ++b) {
    const Logits<T>& g = grad_logits[b];
    if (g.channels() != classes || g.height() != s.g0.h || g.width() != s.g0.w) {
      throw ShapeError("backward: gradient shape does not match logits");
    }
    for (int c = 0; c < classes; ++c) {
      auto plane = g.plane(c);
      std::copy(plane.begin(), plane.end(), dl.row(c).data() + b * s.g0.hw());
    }
  }

  ModelParams<T> grad(p.arch());
  // head (1x1)
  wmat_mut(grad, D[kHead], kHead).noalias() += dl * s.d1b.transpose();
  bias_mut(grad, kHead) += dl.rowwise().sum();
  Mat<T> d(D[kHead].in, s.g0.n());
  per_sample_product<T>(wmat(p, D[kHead], kHead).transpose(), dl, s.g0.hw(), d);

  relu_backward(d, s.d1b);
  d = conv3_backward(p, grad, D[kDec1b], kDec1b, s.d1a, s.g0, d, true);
  relu_backward(d, s.d1a);
  d = conv3_backward(p, grad, D[kDec1a], kDec1a, s.c1, s.g0, d, true);
  const int w1 = D[kUp1].out;
  Mat<T> de1b = d.bottomRows(d.rows() - w1);
  d = upconv2_backward(p, grad, D[kUp1], kUp1, s.d2b, s.g1, Mat<T>(d.topRows(w1)));

  relu_backward(d, s.d2b);
  d = conv3_backward(p, grad, D[kDec2b], kDec2b, s.d2a, s.g1, d, true);
  relu_backward(d, s.d2a);
  d = conv3_backward(p, grad, D[kDec2a], kDec2a, s.c2, s.g1, d, true);
  const int w2 = D[kUp2].out;
  Mat<T> de2b = d.bottomRows(d.rows() - w2);
  d = upconv2_backward(p, grad, D[kUp2], kUp2, s.bb, s.g2, Mat<T>(d.topRows(w2)));

  relu_backward(d, s.bb);
  d = conv3_backward(p, grad, D[kBotB], kBotB, s.ba, s.g2, d, true);
  relu_backward(d, s.ba);
  d = conv3_backward(p, grad, D[kBotA], kBotA, s.p2, s.g2, d, true);
  maxpool2_backward_add(d, s.p2_idx, de2b);

  relu_backward(de2b, s.e2b);
  d = conv3_backward(p, grad, D[kEnc2b], kEnc2b, s.e2a, s.g1, de2b, true);
  relu_backward(d, s.e2a);
  d = conv3_backward(p, grad, D[kEnc2a], kEnc2a, s.p1, s.g1, d, true);
  maxpool2_backward_add(d, s.p1_idx, de1b);

  relu_backward(de1b, s.e1b);
  d = conv3_backward(p, grad, D[kEnc1b], kEnc1b, s.e1a, s.g0, de1b, true);
  relu_backward(d, s.e1a);
  conv3_backward(p, grad, D[kEnc1a], kEnc1a, s.x, s.g0, d, false);
  return grad;
}

OptimizerState::OptimizerState(const ModelParams<float>& params, AdamWConfig config)
    : config_(config), m_(params.size(), 0.0), v_(params.size(), 0.0) {
  if (!(config.lr > 0.0) || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 ||
      config.beta2 >= 1.0 || !(config.eps > 0.0) || config.weight_decay < 0.0) {
    throw PreconditionError("invalid AdamW configuration");
  }
}

void optimizer_step(OptimizerState& state, ModelParams<float>& params, const ModelParams<float>& grads) {
  if (!params.compatible(grads) || state.m_.size() != params.size()) {
    throw ShapeError("optimizer_step: gradient/parameter/state shapes differ");
  }
  const AdamWConfig& c = state.config_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.lr * c.weight_decay;
  auto p = params.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    state.m_[i] = c.beta1 * state.m_[i] + (1.0 - c.beta1) * gi;
    state.v_[i] = c.beta2 * state.v_[i] + (1.0 - c.beta2) * gi * gi;
    const double denom = std::sqrt(state.v_[i] / bc2) + c.eps;
    const double updated = static_cast<double>(p[i]) * decay - c.lr * (state.m_[i] / bc1) / denom;
    p[i] = static_cast<float>(updated);
  }
}

ModelParams<float> ema_update(const ModelParams<float>& teacher, const ModelParams<float>& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw PreconditionError("ema_update: alpha must lie in [0, 1]");
  if (!teacher.compatible(student)) throw ShapeError("ema_update: teacher and student architectures differ");
  ModelParams<float> out = teacher;
  auto o = out.values();
  auto s = student.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<float>(alpha * o[i] + (1.0 - alpha) * s[i]);
  }
  return out;
}

namespace {

// True when both passes took the same branch at every ReLU and max-pool.
bool same_switches(const ForwardTape<double>::State& a, const ForwardTape<double>::State& b) {
  auto signs = [](const Mat<double>& x, const Mat<double>& y) {
    if (x.size() != y.size()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if ((x.data()[i] > 0.0) != (y.data()[i] > 0.0)) return false;
    }
    return true;
  };
  return a.p1_idx == b.p1_idx && a.p2_idx == b.p2_idx && signs(a.e1a, b.e1a) && signs(a.e1b, b.e1b) &&
         signs(a.e2a, b.e2a) && signs(a.e2b, b.e2b) && signs(a.ba, b.ba) && signs(a.bb, b.bb) &&
         signs(a.d2a, b.d2a) && signs(a.d2b, b.d2b) && signs(a.d1a, b.d1a) && signs(a.d1b, b.d1b);
}

}  // namespace

GradientCheckResult gradient_check(const ModelParams<double>& model, std::span<const Image> batch,
                                   const BatchLossFn& loss_fn, const GradientCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw PreconditionError("gradient_check: epsilon must be positive");
  if (options.samples_per_tensor < 1) throw PreconditionError("gradient_check: need at least one sample per tensor");

  auto fwd = forward_train(model, batch);
  LossAndGrad lg = loss_fn(fwd.logits);
  const ModelParams<double> analytic = backward(model, fwd.tape, std::span<const Logits<double>>(lg.grad));

  ModelParams<double> probe = model;
  std::mt19937_64 rng(options.seed);
  GradientCheckResult result;
  bool crossed = false;
  auto eval = [&]() {
    auto f = forward_train(probe, batch);
    crossed = crossed || !same_switches(f.tape.state(), fwd.tape.state());
    return loss_fn(f.logits).value;
  };
  for (std::size_t t = 0; t < model.layout().size(); ++t) {
    const ParamInfo& info = model.layout()[t];
    std::uniform_int_distribution<std::size_t> pick(0, info.count - 1);
    const int samples = static_cast<int>(std::min<std::size_t>(info.count, options.samples_per_tensor));
    for (int k = 0; k < samples; ++k) {
      const std::size_t i = info.offset + (samples == static_cast<int>(info.count) ? k : pick(rng));
      const double saved = probe.values()[i];
      crossed = false;
      probe.values()[i] = saved + options.epsilon;
      const double plus = eval();
      probe.values()[i] = saved - options.epsilon;
      const double minus = eval();
      probe.values()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic.values()[i];
      result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
      if (crossed) {
        ++result.kink_crossings;
        continue;
      }
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      result.max_relative_error = std::max(result.max_relative_error, rel);
      ++result.checked;
    }
  }
  return result;
}

template class ModelParams<float>;
template class ModelParams<double>;
template class ForwardTape<float>;
template class ForwardTape<double>;
template ModelParams<float> init_params<float>(const ArchitectureConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ArchitectureConfig&, std::uint64_t);
template Logits<float> forward<float>(const ModelParams<float>&, const Image&);
template Logits<double> forward<double>(const ModelParams<double>&, const Image&);
template std::vector<Logits<float>> forward_batch<float>(const ModelParams<float>&, std::span<const Image>);
template std::vector<Logits<double>> forward_batch<double>(const ModelParams<double>&, std::span<const Image>);
template TrainingForward<float> forward_train<float>(const ModelParams<float>&, std::span<const Image>);
template TrainingForward<double> forward_train<double>(const ModelParams<double>&, std::span<const Image>);
template ModelParams<float> backward<float>(const ModelParams<float>&, const ForwardTape<float>&,
                                            std::span<const Logits<float>>);
template ModelParams<double> backward<double>(const ModelParams<double>&, const ForwardTape<double>&,
                                              std::span<const Logits<double>>);

}  // namespace adamix
