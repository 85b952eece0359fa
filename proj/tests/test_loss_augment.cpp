#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "adamix/augment.hpp"
#include "adamix/loss.hpp"
#include "helpers.hpp"

using namespace adamix;
using namespace adamix::testing;

namespace {

// Direct per-pixel restatement of the loss: softmax, CE over selected pixels,
// soft Dice averaged over classes that appear in the selected target.
double reference_loss(const Logits<double>& z, const LabelMap& t, const BinaryMask* mask) {
  const int C = z.channels();
  double ce = 0.0;
  int count = 0;
  std::vector<double> inter(C), ps(C), gs(C);
  for (int y = 0; y < z.height(); ++y) {
    for (int x = 0; x < z.width(); ++x) {
      if (mask && mask->at(y, x) == 0) continue;
      std::vector<double> p(C);
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += p[c] = std::exp(z(c, y, x));
      for (int c = 0; c < C; ++c) p[c] /= s;
      const int g = t.at(y, x);
      ce += -std::log(p[g]);
      for (int c = 0; c < C; ++c) {
        ps[c] += p[c];
        if (c == g) {
          inter[c] += p[c];
          gs[c] += 1;
        }
      }
      ++count;
    }
  }
  if (count == 0) return 0.0;
  double d = 0.0;
  int present = 0;
  for (int c = 0; c < C; ++c) {
    if (gs[c] == 0) continue;
    ++present;
    d += (2 * inter[c] + 1e-5) / (ps[c] + gs[c] + 1e-5);
  }
  return 0.5 * ce / count + 0.5 * (1.0 - d / present);
}

BinaryMask random_mask(int h, int w, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.5);
  BinaryMask m = make_plane<BinaryMask>(h, w);
  for (auto& v : m.data()) v = b(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("seg_loss matches the direct per-pixel formula") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const Logits<double> z = random_logits<double>(3, 7, 9, rng, 3.0);
    const LabelMap t = random_labels(7, 9, trial % 2 ? 3 : 2, rng);
    CHECK(seg_loss(z, t).total == doctest::Approx(reference_loss(z, t, nullptr)).epsilon(1e-12));
    const BinaryMask m = random_mask(7, 9, rng);
    CHECK(seg_loss(z, t, &m).total == doctest::Approx(reference_loss(z, t, &m)).epsilon(1e-12));
  }
}

TEST_CASE("seg_loss extremes") {
  LabelMap t(1, 4, 4);
  for (int i = 0; i < 16; ++i) t.data()[i] = static_cast<std::uint8_t>(i % 3);
  Logits<double> perfect(3, 4, 4, -30.0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) perfect(t.at(y, x), y, x) = 30.0;
  const SegLossTerms good = seg_loss(perfect, t);
  CHECK(good.total < 1e-9);
  CHECK(good.pixels == 16);

  // uniform prediction: CE = ln 3
  const SegLossTerms flat = seg_loss(Logits<double>(3, 4, 4, 0.0), t);
  CHECK(flat.ce == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  BinaryMask none = make_plane<BinaryMask>(4, 4, 0);
  Logits<double> g;
  const SegLossTerms empty = seg_loss_grad(perfect, t, &none, 1.0, g);
  CHECK(empty.total == 0.0);
  CHECK(empty.pixels == 0);
  for (double v : g.data()) CHECK(v == 0.0);

  LabelMap bad = t;
  bad.data()[0] = 3;
  CHECK_THROWS_AS(seg_loss(perfect, bad), PreconditionError);
  CHECK_THROWS_AS(seg_loss(perfect, LabelMap(1, 4, 5)), ShapeError);
}

TEST_CASE("seg_loss gradient agrees with central differences") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    Logits<double> z = random_logits<double>(3, 5, 6, rng, 2.0);
    const LabelMap t = random_labels(5, 6, 3, rng);
    const BinaryMask m = random_mask(5, 6, rng);
    const BinaryMask* mp = trial % 2 ? &m : nullptr;
    Logits<double> g;
    const double scale = 0.75;
    seg_loss_grad(z, t, mp, scale, g);
    for (std::size_t i = 0; i < z.data().size(); ++i) {
      const double keep = z.data()[i];
      z.data()[i] = keep + 1e-6;
      const double up = reference_loss(z, t, mp);
      z.data()[i] = keep - 1e-6;
      const double down = reference_loss(z, t, mp);
      z.data()[i] = keep;
      const double fd = scale * (up - down) / 2e-6;
      REQUIRE(std::abs(g.data()[i] - fd) <= 1e-8 + 1e-5 * std::abs(fd));
    }
  }
}

TEST_CASE("unsup_loss selects pixels by confidence") {
  std::mt19937_64 rng(23);
  const Logits<float> z = random_logits<float>(3, 6, 6, rng);
  const LabelMap pl = random_labels(6, 6, 3, rng);
  const ConfidenceMap conf = random_confidence(6, 6, rng);

  CHECK(unsup_loss(z, pl, conf, 0.0).total == doctest::Approx(seg_loss(z, pl).total).epsilon(1e-12));
  CHECK(unsup_loss(z, pl, conf, 1.01).pixels == 0);
  CHECK(unsup_loss(z, pl, conf, 1.01).total == 0.0);

  const BinaryMask m = confidence_mask(conf, 0.7);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    CHECK(m.data()[i] == (conf.data()[i] >= 0.7f ? 1 : 0));
    kept += m.data()[i];
  }
  const SegLossTerms u = unsup_loss(z, pl, conf, 0.7);
  CHECK(u.pixels == kept);
  CHECK(u.total == doctest::Approx(seg_loss(z, pl, &m).total).epsilon(1e-12));

  // a pixel exactly at the threshold counts
  ConfidenceMap edge(1, 1, 1, 0.95f);
  CHECK(confidence_mask(edge, 0.95f).at(0, 0) == 1);
}

TEST_CASE("masked-out pixels get zero gradient and do not affect the loss") {
  std::mt19937_64 rng(24);
  Logits<float> z = random_logits<float>(3, 6, 6, rng);
  const LabelMap pl = random_labels(6, 6, 3, rng);
  const ConfidenceMap conf = random_confidence(6, 6, rng);
  const BinaryMask m = confidence_mask(conf, 0.6);
  Logits<float> g;
  const double before = seg_loss_grad(z, pl, &m, 1.0, g).total;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      if (m.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        CHECK(g(c, y, x) == 0.0f);
        z(c, y, x) += 5.0f;
      }
    }
  CHECK(seg_loss(z, pl, &m).total == before);
}

TEST_CASE("geometric transforms: group identities") {
  std::mt19937_64 rng(31);
  const Image img = random_image(6, 10, rng);
  GeometricTransform r1;
  r1.rot90 = 1;
  Image cur = img;
  for (int k = 0; k < 4; ++k) cur = apply_geometric(cur, r1);
  CHECK(cur.data()[0] == img.data()[0]);
  CHECK(std::equal(cur.data().begin(), cur.data().end(), img.data().begin()));

  const Image once = apply_geometric(img, r1);
  CHECK(once.height() == 10);
  CHECK(once.width() == 6);
  // counter-clockwise quarter turn: the top-right corner moves to the top-left
  CHECK(once.at(0, 0) == img.at(0, 9));

  GeometricTransform fh;
  fh.flip_h = true;
  const Image twice = apply_geometric(apply_geometric(img, fh), fh);
  CHECK(std::equal(twice.data().begin(), twice.data().end(), img.data().begin()));
  CHECK(apply_geometric(img, fh).at(2, 0) == img.at(2, 9));

  GeometricTransform fv;
  fv.flip_v = true;
  CHECK(apply_geometric(img, fv).at(0, 3) == img.at(5, 3));
  CHECK(GeometricTransform{}.is_identity());
  CHECK(!fv.is_identity());
}

TEST_CASE("weak augmentation moves labels with the image and is seed-deterministic") {
  std::mt19937_64 data_rng(32);
  const LabelMap label = random_labels(8, 8, 3, data_rng);
  Image img(1, 8, 8);
  // encode the label in the image so correspondence can be read back
  for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = label.data()[i] / 4.0f + 0.02f * (i % 7);
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 a(seed), b(seed);
    const WeakView va = weak_aug(img, &label, a);
    const WeakView vb = weak_aug(img, &label, b);
    REQUIRE(va.label.has_value());
    REQUIRE(std::equal(va.image.data().begin(), va.image.data().end(), vb.image.data().begin()));
    const Image moved = apply_geometric(img, va.transform);
    const LabelMap moved_label = apply_geometric(label, va.transform);
    REQUIRE(std::equal(moved.data().begin(), moved.data().end(), va.image.data().begin()));
    REQUIRE(std::equal(moved_label.data().begin(), moved_label.data().end(), va.label->data().begin()));
    // every pixel keeps its own label: the image encodes it
    for (std::size_t i = 0; i < va.image.data().size(); ++i) {
      REQUIRE(static_cast<int>(va.image.data()[i] * 4.0f + 1e-4f) == va.label->data()[i]);
    }
    seen.insert(va.transform.rot90 * 4 + va.transform.flip_h * 2 + va.transform.flip_v);
  }
  CHECK(seen.size() > 4);

  std::mt19937_64 rng(1);
  CHECK_FALSE(weak_aug(img, nullptr, rng).label.has_value());
  const LabelMap wrong(1, 8, 9);
  CHECK_THROWS_AS(weak_aug(img, &wrong, rng), ShapeError);
}

TEST_CASE("photometric transform") {
  std::mt19937_64 rng(33);
  const Image img = random_image(8, 8, rng);
  const Image same = apply_photometric(img, PhotometricTransform{});
  CHECK(std::equal(same.data().begin(), same.data().end(), img.data().begin()));

  PhotometricTransform shift;
  shift.brightness = 0.1;
  const Image shifted = apply_photometric(img, shift);
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    CHECK(shifted.data()[i] == doctest::Approx(std::min(1.0, img.data()[i] + 0.1)).epsilon(1e-6));
  }

  for (int trial = 0; trial < 50; ++trial) {
    const PhotometricTransform t = sample_photometric(rng);
    REQUIRE(std::abs(t.brightness) <= kMaxJitter);
    REQUIRE(std::abs(t.contrast - 1.0) <= kMaxJitter);
    REQUIRE(t.noise_sigma >= 0.0);
    REQUIRE(t.noise_sigma <= kMaxNoiseSigma);
    const Image out = apply_photometric(img, t);
    for (float v : out.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    REQUIRE(std::equal(out.data().begin(), out.data().end(), apply_photometric(img, t).data().begin()));
  }

  std::mt19937_64 a(7), b(7);
  const Image sa = strong_aug_pixel(img, a);
  const Image sb = strong_aug_pixel(img, b);
  CHECK(std::equal(sa.data().begin(), sa.data().end(), sb.data().begin()));
  CHECK(sa.height() == img.height());
}
