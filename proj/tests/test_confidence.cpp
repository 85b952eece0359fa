#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adamix/confidence.hpp"
#include "helpers.hpp"

using namespace adamix;
using adamix::testing::random_confidence;
using adamix::testing::random_logits;

namespace {

Logits<float> pixel_logits(std::initializer_list<float> values) {
  Logits<float> l(static_cast<int>(values.size()), 1, 1);
  int c = 0;
  for (float v : values) l(c++, 0, 0) = v;
  return l;
}

}  // namespace

TEST_CASE("softmax closed forms") {
  const ProbMap p = softmax_probs(pixel_logits({2.0f, 0.0f}));
  const double e2 = std::exp(2.0);
  CHECK(p(0, 0, 0) == doctest::Approx(e2 / (e2 + 1.0)).epsilon(1e-6));
  CHECK(p(0, 0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(p(1, 0, 0) == doctest::Approx(0.1192).epsilon(1e-3));

  const ProbMap u = softmax_probs(pixel_logits({0.5f, 0.5f, 0.5f}));
  for (int c = 0; c < 3; ++c) CHECK(u(c, 0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("softmax is shift invariant and normalized") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Logits<float> l = random_logits<float>(3, 6, 5, rng, 5.0);
    Logits<float> shifted = l;
    for (float& v : shifted.data()) v += 100.0f;
    const ProbMap a = softmax_probs(l);
    const ProbMap b = softmax_probs(shifted);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 5; ++x) {
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
          sum += a(c, y, x);
          REQUIRE(a(c, y, x) >= 0.0f);
          // the +100 shift rounds the float logits, so compare loosely
          REQUIRE(std::abs(a(c, y, x) - b(c, y, x)) < 1e-4);
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-6);
      }
    }
  }
  const ProbMap big = softmax_probs(pixel_logits({1000.0f, 0.0f, -1000.0f}));
  CHECK(big(0, 0, 0) == 1.0f);
}

TEST_CASE("softmax rejects non-finite logits") {
  CHECK_THROWS_AS(softmax_probs(pixel_logits({NAN, 0.0f})), PreconditionError);
  CHECK_THROWS_AS(softmax_probs(pixel_logits({INFINITY, 0.0f})), PreconditionError);
}

TEST_CASE("pseudo labels: argmax, confidence, tie rule") {
  ProbMap p(2, 1, 1);
  p(0, 0, 0) = 0.8808f;
  p(1, 0, 0) = 0.1192f;
  PseudoLabels pl = pseudo_label(p);
  CHECK(pl.labels.at(0, 0) == 0);
  CHECK(pl.confidence.at(0, 0) == doctest::Approx(0.8808));

  ProbMap u(3, 1, 1, 1.0f / 3.0f);
  pl = pseudo_label(u);
  CHECK(pl.labels.at(0, 0) == 0);
  CHECK(pl.confidence.at(0, 0) == doctest::Approx(1.0 / 3.0));

  ProbMap onehot(3, 1, 1, 0.0f);
  onehot(2, 0, 0) = 1.0f;
  pl = pseudo_label(onehot);
  CHECK(pl.labels.at(0, 0) == 2);
  CHECK(pl.confidence.at(0, 0) == 1.0f);
}

TEST_CASE("confidence always lies in [1/C, 1]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const PseudoLabels pl = pseudo_label(softmax_probs(random_logits<float>(3, 8, 8, rng, 10.0)));
    for (float v : pl.confidence.data()) {
      REQUIRE(v >= 1.0f / 3.0f - 1e-7f);
      REQUIRE(v <= 1.0f);
    }
  }
}

TEST_CASE("patch grid tiles the image") {
  const PatchGrid g(64, 32, 8);
  CHECK(g.rows() == 8);
  CHECK(g.cols() == 4);
  CHECK(g.total() == 32);
  std::vector<int> cover(64 * 32, 0);
  for (int i = 0; i < g.total(); ++i) {
    const auto r = g.rect(i);
    CHECK(r.y1 - r.y0 == 8);
    CHECK(r.x1 - r.x0 == 8);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        ++cover[y * 32 + x];
        REQUIRE(g.patch_of(y, x) == i);
      }
  }
  CHECK(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));
  CHECK(g.rect(5).y0 == 8);  // row-major: patch 5 is row 1, col 1
  CHECK(g.rect(5).x0 == 8);
  CHECK_THROWS(PatchGrid(64, 60, 8));
  CHECK_THROWS(PatchGrid(64, 64, 0));
}

TEST_CASE("patch scores") {
  const PatchGrid g(4, 4, 2);
  const ConfidenceMap flat(1, 4, 4, 0.7f);
  for (double s : patch_scores(flat, g)) CHECK(s == doctest::Approx(0.7));

  ConfidenceMap m(1, 4, 4, 0.5f);
  for (int y = 0; y < 2; ++y)
    for (int x = 2; x < 4; ++x) m.at(y, x) = 1.0f;
  const auto s = patch_scores(m, g);
  CHECK(s[1] == doctest::Approx(1.0));
  CHECK(s[0] == doctest::Approx(0.5));

  CHECK_THROWS_AS(patch_scores(ConfidenceMap(1, 4, 6), g), ShapeError);
}

TEST_CASE("patch scores equal brute-force rectangle means and ignore in-patch permutations") {
  std::mt19937_64 rng(9);
  const PatchGrid g(16, 24, 4);
  for (int trial = 0; trial < 10; ++trial) {
    ConfidenceMap c = random_confidence(16, 24, rng);
    const auto s = patch_scores(c, g);
    for (int py = 0; py < 4; ++py)
      for (int px = 0; px < 6; ++px) {
        double sum = 0.0;
        for (int y = py * 4; y < py * 4 + 4; ++y)
          for (int x = px * 4; x < px * 4 + 4; ++x) sum += c.at(y, x);
        REQUIRE(s[py * 6 + px] == doctest::Approx(sum / 16.0).epsilon(1e-12));
      }
    // shuffle pixels within every patch
    ConfidenceMap shuffled = c;
    for (int i = 0; i < g.total(); ++i) {
      const auto r = g.rect(i);
      std::vector<float> vals;
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) vals.push_back(c.at(y, x));
      std::shuffle(vals.begin(), vals.end(), rng);
      std::size_t k = 0;
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) shuffled.at(y, x) = vals[k++];
    }
    const auto s2 = patch_scores(shuffled, g);
    for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(s2[i] == doctest::Approx(s[i]).epsilon(1e-12));
  }
}

TEST_CASE("rank_patches") {
  const std::vector<double> s = {0.2, 0.9, 0.5};
  const auto hi = rank_patches(s, RankOrder::HighestFirst);
  CHECK(hi[0].index == 1);
  CHECK(hi[1].index == 2);
  CHECK(hi[2].index == 0);

  const std::vector<double> eq(5, 0.4);
  for (RankOrder o : {RankOrder::HighestFirst, RankOrder::LowestFirst}) {
    const auto r = rank_patches(eq, o);
    for (int i = 0; i < 5; ++i) CHECK(r[i].index == i);
  }
  CHECK_THROWS_AS(rank_patches(std::vector<double>{}, RankOrder::LowestFirst), PreconditionError);
}

TEST_CASE("rank_patches: permutation, order, reversal, idempotence") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(1 + trial % 40);
    for (double& v : s) v = u(rng);
    const auto hi = rank_patches(s, RankOrder::HighestFirst);
    const auto lo = rank_patches(s, RankOrder::LowestFirst);
    std::vector<int> idx;
    for (const auto& r : hi) idx.push_back(r.index);
    std::sort(idx.begin(), idx.end());
    std::vector<int> iota(s.size());
    std::iota(iota.begin(), iota.end(), 0);
    REQUIRE(idx == iota);
    for (std::size_t i = 1; i < hi.size(); ++i) {
      REQUIRE(hi[i - 1].score >= hi[i].score);
      REQUIRE(lo[i - 1].score <= lo[i].score);
    }
    for (std::size_t i = 0; i < hi.size(); ++i) REQUIRE(hi[i].index == lo[lo.size() - 1 - i].index);

    // ranking the ranked scores again keeps the order
    std::vector<double> ranked_scores;
    for (const auto& r : hi) ranked_scores.push_back(r.score);
    const auto again = rank_patches(ranked_scores, RankOrder::HighestFirst);
    for (std::size_t i = 0; i < again.size(); ++i) REQUIRE(again[i].index == static_cast<int>(i));
  }
}
