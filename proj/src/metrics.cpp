#include "adamix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adamix {

namespace {

struct Counts {
  std::int64_t inter = 0;
  std::int64_t pred = 0;
  std::int64_t gt = 0;
};

Counts count(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_spatial(pred, gt, "overlap metric");
  if (pred.size() != gt.size()) throw ShapeError("overlap metric: channel counts differ");
  Counts c;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0;
    const bool b = g[i] != 0;
    c.pred += a;
    c.gt += b;
    c.inter += a && b;
  }
  return c;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher 1D squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

// Squared Euclidean distance from every pixel to the nearest nonzero pixel of `sites`.
std::vector<double> squared_distance_map(const BinaryMask& sites) {
  const int h = sites.height();
  const int w = sites.width();
  std::vector<double> g(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = sites.data()[i] ? 0.0 : kInf;
  const int n = std::max(h, w);
  std::vector<double> f, d;
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  f.resize(h);
  d.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = g[y * w + x];
    edt_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) g[y * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = g[y * w + x];
    edt_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) g[y * w + x] = d[x];
  }
  return g;
}

void directed(const BinaryMask& from, const std::vector<double>& to_sq, std::vector<double>& out) {
  const auto px = from.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i]) out.push_back(std::sqrt(to_sq[i]));
  }
}

}  // namespace

std::string describe_flags(std::uint32_t flags) {
  std::string s;
  auto add = [&](const char* name) {
    if (!s.empty()) s += '|';
    s += name;
  };
  if (flags & kFlagBothEmpty) add("both_empty");
  if (flags & kFlagSurfaceUndefined) add("surface_undefined");
  return s;
}

OverlapResult dice(const BinaryMask& pred, const BinaryMask& gt) {
  const Counts c = count(pred, gt);
  if (c.pred + c.gt == 0) return {1.0, true};
  return {2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt), false};
}

OverlapResult jaccard(const BinaryMask& pred, const BinaryMask& gt) {
  const Counts c = count(pred, gt);
  const std::int64_t uni = c.pred + c.gt - c.inter;
  if (uni == 0) return {1.0, true};
  return {static_cast<double>(c.inter) / static_cast<double>(uni), false};
}

BinaryMask class_mask(const LabelMap& labels, int cls) {
  BinaryMask m(1, labels.height(), labels.width());
  const auto src = labels.plane(0);
  auto dst = m.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] == cls ? 1 : 0;
  return m;
}

BinaryMask boundary(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  BinaryMask b(1, h, w);
  auto inside = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w && mask.at(y, x) != 0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      if (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)) b.at(y, x) = 1;
    }
  }
  return b;
}

double percentile(std::vector<double>& values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw PreconditionError("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_spatial(pred, gt, "surface_distances");
  const BinaryMask bp = boundary(pred);
  const BinaryMask bg = boundary(gt);
  const auto any = [](const BinaryMask& m) {
    return std::any_of(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v != 0; });
  };
  if (!any(bp) || !any(bg)) return {};
  std::vector<double> pooled;
  directed(bp, squared_distance_map(bg), pooled);
  directed(bg, squared_distance_map(bp), pooled);
  double sum = 0.0;
  for (double d : pooled) sum += d;
  SurfaceDistances out;
  out.defined = true;
  out.asd = sum / static_cast<double>(pooled.size());
  out.hd95 = percentile(pooled, 0.95);
  return out;
}

MetricReport evaluate_sample(const LabelMap& pred, const LabelMap& gt, int n_classes) {
  require_same_spatial(pred, gt, "evaluate_sample");
  if (n_classes < 2) throw PreconditionError("evaluate_sample: need at least two classes");
  MetricReport r;
  double dsc_sum = 0.0, jac_sum = 0.0, hd_sum = 0.0, asd_sum = 0.0;
  int overlap_n = 0, surface_n = 0;
  for (int c = 1; c < n_classes; ++c) {
    const BinaryMask p = class_mask(pred, c);
    const BinaryMask g = class_mask(gt, c);
    ClassMetrics m;
    m.cls = c;
    const OverlapResult d = dice(p, g);
    m.dsc = d.value;
    m.jaccard = jaccard(p, g).value;
    if (d.both_empty) m.flags |= kFlagBothEmpty;
    const SurfaceDistances s = surface_distances(p, g);
    if (s.defined) {
      m.hd95 = s.hd95;
      m.asd = s.asd;
    } else {
      m.flags |= kFlagSurfaceUndefined;
    }
    if (!d.both_empty) {
      dsc_sum += m.dsc;
      jac_sum += m.jaccard;
      ++overlap_n;
    }
    if (s.defined) {
      hd_sum += s.hd95;
      asd_sum += s.asd;
      ++surface_n;
    }
    r.per_class.push_back(m);
  }
  if (overlap_n > 0) {
    r.dsc = dsc_sum / overlap_n;
    r.jaccard = jac_sum / overlap_n;
  } else {
    r.dsc = r.jaccard = 1.0;
  }
  if (surface_n > 0) {
    r.hd95 = hd_sum / surface_n;
    r.asd = asd_sum / surface_n;
  }
  return r;
}

DatasetMetrics aggregate(const std::vector<MetricReport>& reports, int n_classes) {
  DatasetMetrics out;
  std::vector<double> cls_sum(n_classes - 1, 0.0);
  std::vector<int> cls_n(n_classes - 1, 0);
  double dsc = 0.0, jac = 0.0, hd = 0.0, asd = 0.0;
  int n = 0, sn = 0;
  for (const MetricReport& r : reports) {
    for (const ClassMetrics& m : r.per_class) {
      if (m.cls < 1 || m.cls >= n_classes) throw PreconditionError("aggregate: class out of range");
      if (!(m.flags & kFlagBothEmpty)) {
        cls_sum[m.cls - 1] += m.dsc;
        ++cls_n[m.cls - 1];
        dsc += m.dsc;
        jac += m.jaccard;
        ++n;
      }
      if (m.hd95 && m.asd) {
        hd += *m.hd95;
        asd += *m.asd;
        ++sn;
      }
    }
  }
  for (int c = 0; c < n_classes - 1; ++c) out.class_dsc.push_back(cls_n[c] ? cls_sum[c] / cls_n[c] : 0.0);
  if (n > 0) {
    out.dsc = dsc / n;
    out.jaccard = jac / n;
  }
  if (sn > 0) {
    out.hd95 = hd / sn;
    out.asd = asd / sn;
  }
  return out;
}

}  // namespace adamix
