#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "adamix/loss.hpp"
#include "adamix/segmodel.hpp"
#include "helpers.hpp"

using namespace adamix;
using adamix::testing::random_image;
using adamix::testing::random_labels;

namespace {

// Naive reference network: direct loops over (C, H, W) vectors, no im2col, no batching.
struct Act {
  int c, h, w;
  std::vector<double> v;
  double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  double at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

Act make(int c, int h, int w) { return {c, h, w, std::vector<double>(static_cast<std::size_t>(c) * h * w, 0.0)}; }

template <typename P>
Act conv3(const P& p, const std::string& name, const Act& in, bool relu) {
  const auto w = p.tensor(name + ".weight");
  const auto b = p.tensor(name + ".bias");
  const int out_c = static_cast<int>(b.size());
  Act o = make(out_c, in.h, in.w);
  for (int co = 0; co < out_c; ++co) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double s = b[co];
        for (int ci = 0; ci < in.c; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = y + ky - 1, sx = x + kx - 1;
              if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
              s += w[((co * in.c + ci) * 3 + ky) * 3 + kx] * in.at(ci, sy, sx);
            }
          }
        }
        o.at(co, y, x) = relu ? std::max(0.0, s) : s;
      }
    }
  }
  return o;
}

Act pool(const Act& in) {
  Act o = make(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < o.h; ++y)
      for (int x = 0; x < o.w; ++x)
        o.at(c, y, x) = std::max({in.at(c, 2 * y, 2 * x), in.at(c, 2 * y, 2 * x + 1), in.at(c, 2 * y + 1, 2 * x),
                                  in.at(c, 2 * y + 1, 2 * x + 1)});
  return o;
}

template <typename P>
Act upconv(const P& p, const std::string& name, const Act& in) {
  const auto w = p.tensor(name + ".weight");
  const auto b = p.tensor(name + ".bias");
  const int out_c = static_cast<int>(b.size());
  Act o = make(out_c, in.h * 2, in.w * 2);
  for (int co = 0; co < out_c; ++co)
    for (int y = 0; y < o.h; ++y)
      for (int x = 0; x < o.w; ++x) {
        const int dy = y % 2, dx = x % 2;
        double s = b[co];
        for (int ci = 0; ci < in.c; ++ci) s += w[((dy * 2 + dx) * out_c + co) * in.c + ci] * in.at(ci, y / 2, x / 2);
        o.at(co, y, x) = s;
      }
  return o;
}

Act concat(const Act& a, const Act& b) {
  Act o = make(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), o.v.begin());
  std::copy(b.v.begin(), b.v.end(), o.v.begin() + a.v.size());
  return o;
}

template <typename P>
Act reference_forward(const P& p, const Image& img) {
  Act x = make(1, img.height(), img.width());
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = img.data()[i];
  const Act e1 = conv3(p, "enc1b", conv3(p, "enc1a", x, true), true);
  const Act e2 = conv3(p, "enc2b", conv3(p, "enc2a", pool(e1), true), true);
  const Act bt = conv3(p, "bottleneck_b", conv3(p, "bottleneck_a", pool(e2), true), true);
  const Act d2 = conv3(p, "dec2b", conv3(p, "dec2a", concat(upconv(p, "up2", bt), e2), true), true);
  const Act d1 = conv3(p, "dec1b", conv3(p, "dec1a", concat(upconv(p, "up1", d2), e1), true), true);
  const auto hw = p.tensor("head.weight");
  const auto hb = p.tensor("head.bias");
  const int classes = static_cast<int>(hb.size());
  Act o = make(classes, d1.h, d1.w);
  for (int k = 0; k < classes; ++k)
    for (int y = 0; y < d1.h; ++y)
      for (int xx = 0; xx < d1.w; ++xx) {
        double s = hb[k];
        for (int ci = 0; ci < d1.c; ++ci) s += hw[k * d1.c + ci] * d1.at(ci, y, xx);
        o.at(k, y, xx) = s;
      }
  return o;
}

std::size_t conv3_count(int in, int out) { return static_cast<std::size_t>(out) * in * 9 + out; }
std::size_t up_count(int in, int out) { return static_cast<std::size_t>(4) * out * in + out; }

LossAndGrad seg_loss_sum(const std::vector<Logits<double>>& logits, const std::vector<LabelMap>& labels) {
  LossAndGrad r;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Logits<double> g;
    r.value += seg_loss_grad(logits[i], labels[i], nullptr, 1.0, g).total;
    r.grad.push_back(std::move(g));
  }
  return r;
}

}  // namespace

TEST_CASE("parameter count follows the layer formula") {
  for (int w : {4, 8, 16}) {
    const ArchitectureConfig arch{1, 3, w};
    const std::size_t expected = conv3_count(1, w) + conv3_count(w, w) + conv3_count(w, 2 * w) +
                                 conv3_count(2 * w, 2 * w) + conv3_count(2 * w, 4 * w) + conv3_count(4 * w, 4 * w) +
                                 up_count(4 * w, 2 * w) + conv3_count(4 * w, 2 * w) + conv3_count(2 * w, 2 * w) +
                                 up_count(2 * w, w) + conv3_count(2 * w, w) + conv3_count(w, w) +
                                 static_cast<std::size_t>(3) * w + 3;
    CHECK(ModelParams<float>(arch).size() == expected);
  }
  CHECK(ModelParams<float>(ArchitectureConfig{}).size() == 116787);
}

TEST_CASE("forward matches a direct-loop reference network") {
  std::mt19937_64 rng(7);
  const auto p = init_params<double>({1, 3, 4}, 11);
  ModelParams<double> q = p;
  std::normal_distribution<double> n(0.0, 0.05);
  for (double& v : q.values()) v += n(rng);  // non-zero biases too
  for (int trial = 0; trial < 3; ++trial) {
    const Image img = random_image(8, 12, rng);
    const Logits<double> got = forward(q, img);
    const Act ref = reference_forward(q, img);
    REQUIRE(got.channels() == ref.c);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.v.size(); ++i) worst = std::max(worst, std::abs(got.data()[i] - ref.v[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("forward shape, finiteness and determinism") {
  const auto p = init_params<float>(ArchitectureConfig{}, 3);
  const Image img(1, 64, 64);
  const Logits<float> a = forward(p, img);
  CHECK(a.channels() == 3);
  CHECK(a.height() == 64);
  CHECK(a.width() == 64);
  for (float v : a.data()) REQUIRE(std::isfinite(v));
  std::mt19937_64 rng(1);
  const Image r = random_image(64, 64, rng);
  CHECK(forward(p, r) == forward(p, r));

  const Image batch[2] = {r, img};
  const auto both = forward_batch(p, std::span<const Image>(batch, 2));
  CHECK(both[0] == forward(p, r));
  CHECK(both[1] == a);
}

TEST_CASE("incompatible input shapes are rejected") {
  const auto p = init_params<float>({1, 3, 4}, 0);
  CHECK_THROWS_AS(forward(p, Image(1, 62, 64)), ShapeError);
  CHECK_THROWS_AS(forward(p, Image(2, 64, 64)), ShapeError);
  const Image mixed[2] = {Image(1, 8, 8), Image(1, 16, 16)};
  CHECK_THROWS_AS(forward_batch(p, std::span<const Image>(mixed, 2)), ShapeError);
}

TEST_CASE("initialization is deterministic in the seed") {
  const ArchitectureConfig arch{1, 3, 8};
  CHECK(init_params<float>(arch, 5) == init_params<float>(arch, 5));
  CHECK_FALSE(init_params<float>(arch, 5) == init_params<float>(arch, 6));
  const auto p = init_params<float>(arch, 5);
  for (float b : p.tensor("enc2a.bias")) CHECK(b == 0.0f);
}

TEST_CASE("gradient check on the reference architecture") {
  std::mt19937_64 rng(42);
  const auto model = init_params<double>(ArchitectureConfig{}, 1);
  std::vector<Image> batch = {random_image(16, 16, rng), random_image(16, 16, rng)};
  std::vector<LabelMap> labels = {random_labels(16, 16, 3, rng), random_labels(16, 16, 3, rng)};
  GradientCheckOptions opt;
  opt.epsilon = 1e-5;
  opt.samples_per_tensor = 8;
  const auto res = gradient_check(model, batch, [&](const std::vector<Logits<double>>& l) {
    return seg_loss_sum(l, labels);
  }, opt);
  std::size_t expected = 0;
  for (const ParamInfo& info : model.layout()) expected += std::min<std::size_t>(info.count, 8);
  CHECK(res.checked + res.kink_crossings == expected);
  CHECK(res.checked > 0);
  CHECK(res.max_abs_analytic > 0.0);
  CHECK(res.max_relative_error < 1e-3);
}

TEST_CASE("gradient check flags probes that cross a kink") {
  std::mt19937_64 rng(43);
  const auto model = init_params<double>({1, 3, 4}, 2);
  std::vector<Image> batch = {random_image(16, 16, rng)};
  std::vector<LabelMap> labels = {random_labels(16, 16, 3, rng)};
  GradientCheckOptions opt;
  opt.epsilon = 0.5;
  const auto coarse = gradient_check(model, batch, [&](const std::vector<Logits<double>>& l) {
    return seg_loss_sum(l, labels);
  }, opt);
  CHECK(coarse.kink_crossings > 0);
  opt.epsilon = 1e-6;
  const auto fine = gradient_check(model, batch, [&](const std::vector<Logits<double>>& l) {
    return seg_loss_sum(l, labels);
  }, opt);
  CHECK(fine.kink_crossings < coarse.kink_crossings);
  CHECK(fine.max_relative_error < 1e-3);
}

TEST_CASE("gradient check of a constant loss reports zero gradients") {
  std::mt19937_64 rng(1);
  const auto model = init_params<double>({1, 3, 4}, 1);
  std::vector<Image> batch = {random_image(8, 8, rng)};
  const auto res = gradient_check(model, batch, [](const std::vector<Logits<double>>& l) {
    LossAndGrad r;
    r.value = 3.0;
    for (const auto& x : l) r.grad.emplace_back(x.channels(), x.height(), x.width());
    return r;
  });
  CHECK(res.max_abs_analytic == 0.0);
  CHECK(res.max_relative_error == 0.0);
}

TEST_CASE("gradient check rejects a non-positive epsilon") {
  std::mt19937_64 rng(1);
  const auto model = init_params<double>({1, 3, 4}, 1);
  std::vector<Image> batch = {random_image(8, 8, rng)};
  GradientCheckOptions opt;
  opt.epsilon = 0.0;
  CHECK_THROWS_AS(gradient_check(model, batch, [](const std::vector<Logits<double>>&) { return LossAndGrad{}; }, opt),
                  PreconditionError);
}

TEST_CASE("AdamW: zero gradient and zero decay leave parameters unchanged") {
  auto p = init_params<float>({1, 3, 4}, 2);
  const auto before = p;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState st(p, cfg);
  CHECK(st.step() == 0);
  optimizer_step(st, p, ModelParams<float>(p.arch()));
  CHECK(st.step() == 1);
  CHECK(p == before);
}

TEST_CASE("AdamW: first step matches the closed-form update") {
  auto p = init_params<float>({1, 3, 4}, 2);
  const auto before = p;
  ModelParams<float> g(p.arch());
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (float& v : g.values()) v = n(rng);
  AdamWConfig cfg;  // lr 1e-4, wd 1e-4
  OptimizerState st(p, cfg);
  optimizer_step(st, p, g);
  for (std::size_t i = 0; i < p.size(); ++i) {
    // bias-corrected moments after one step are g and g^2
    const double gi = g.values()[i];
    const double expected =
        before.values()[i] * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * gi / (std::abs(gi) + cfg.eps);
    REQUIRE(std::abs(p.values()[i] - expected) < 1e-7);
  }
  CHECK_THROWS_AS(optimizer_step(st, p, ModelParams<float>(ArchitectureConfig{1, 3, 8})), ShapeError);
}

TEST_CASE("overfitting a single batch drives the supervised loss below 0.1") {
  std::mt19937_64 rng(9);
  auto p = init_params<float>(ArchitectureConfig{}, 4);
  std::vector<Image> batch;
  std::vector<LabelMap> labels;
  for (int k = 0; k < 2; ++k) {
    Image img(1, 32, 32);
    LabelMap lab(1, 32, 32);
    std::uniform_int_distribution<int> pos(6, 25);
    const int cy = pos(rng), cx = pos(rng);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool disk = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= 25;
        const bool box = !disk && std::abs(y - (31 - cy)) <= 3 && std::abs(x - (31 - cx)) <= 4;
        lab.at(y, x) = disk ? 1 : (box ? 2 : 0);
        img.at(y, x) = 0.3f + (disk || box ? 0.4f : 0.0f);
      }
    batch.push_back(img);
    labels.push_back(lab);
  }
  AdamWConfig cfg;
  cfg.lr = 1e-4;
  OptimizerState st(p, cfg);
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    auto fw = forward_train(p, std::span<const Image>(batch));
    std::vector<Logits<float>> grads(batch.size());
    loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      loss += seg_loss_grad(fw.logits[i], labels[i], nullptr, 0.5, grads[i]).total * 0.5;
    }
    optimizer_step(st, p, backward(p, fw.tape, std::span<const Logits<float>>(grads)));
  }
  CHECK(loss < 0.1);
}

TEST_CASE("EMA update") {
  const ArchitectureConfig arch{1, 3, 4};
  ModelParams<float> t(arch), s(arch);
  for (float& v : t.values()) v = 1.0f;
  const auto e = ema_update(t, s, 0.99);
  for (float v : e.values()) REQUIRE(v == doctest::Approx(0.99).epsilon(1e-7));
  std::mt19937_64 rng(2);
  const auto a = init_params<float>(arch, 1);
  const auto b = init_params<float>(arch, 2);
  CHECK(ema_update(a, b, 0.0) == b);
  CHECK(ema_update(a, b, 1.0) == a);
  // monotone in alpha: moves from student towards teacher
  const auto lo = ema_update(a, b, 0.3);
  const auto hi = ema_update(a, b, 0.7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float ta = a.values()[i], sb = b.values()[i];
    if (ta >= sb) {
      REQUIRE(lo.values()[i] <= hi.values()[i]);
    } else {
      REQUIRE(lo.values()[i] >= hi.values()[i]);
    }
  }
  CHECK_THROWS_AS(ema_update(a, b, 1.5), PreconditionError);
  CHECK_THROWS_AS(ema_update(a, ModelParams<float>(ArchitectureConfig{1, 3, 8}), 0.5), ShapeError);
}

TEST_CASE("checkpoint round trip and corruption") {
  adamix::testing::TempDir dir("ckpt");
  const auto p = init_params<float>({1, 3, 8}, 77);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, p, {123, 77});
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.params == p);
  CHECK(loaded.meta.step == 123);
  CHECK(loaded.meta.seed == 77);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::resize_file(path, 20);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}
