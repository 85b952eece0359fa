#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adamix/tensor.hpp"

namespace adamix {

/// Bit flags for metric values that fall back to a convention.
enum MetricFlag : std::uint32_t {
  kFlagNone = 0,
  kFlagBothEmpty = 1u << 0,      ///< dice/jaccard set to 1 by convention
  kFlagSurfaceUndefined = 1u << 1,  ///< one mask empty, hd95/asd undefined
};

std::string describe_flags(std::uint32_t flags);

struct OverlapResult {
  double value = 0.0;
  bool both_empty = false;
};

/// 2|P∩G| / (|P| + |G|); both empty -> 1 (flagged).
OverlapResult dice(const BinaryMask& pred, const BinaryMask& gt);
/// |P∩G| / |P∪G|; both empty -> 1 (flagged).
OverlapResult jaccard(const BinaryMask& pred, const BinaryMask& gt);

BinaryMask class_mask(const LabelMap& labels, int cls);

/// Mask pixels with at least one 4-neighbour outside the mask (the image border counts as outside).
BinaryMask boundary(const BinaryMask& mask);

struct SurfaceDistances {
  bool defined = false;
  double hd95 = 0.0;
  double asd = 0.0;
};

/// Pooled directed nearest-boundary distances in both directions; undefined if either mask is empty.
SurfaceDistances surface_distances(const BinaryMask& pred, const BinaryMask& gt);

/// Linear-interpolation percentile, q in [0, 1]; sorts `values` in place.
double percentile(std::vector<double>& values, double q);

struct ClassMetrics {
  int cls = 0;
  double dsc = 0.0;
  double jaccard = 0.0;
  std::optional<double> hd95;
  std::optional<double> asd;
  std::uint32_t flags = kFlagNone;
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;  ///< foreground classes 1..C-1
  double dsc = 0.0;                     ///< macro averages over defined entries
  double jaccard = 0.0;
  std::optional<double> hd95;
  std::optional<double> asd;
};

/// Per-class metrics for classes 1..n_classes-1 with macro averages.
MetricReport evaluate_sample(const LabelMap& pred, const LabelMap& gt, int n_classes);

struct DatasetMetrics {
  std::vector<double> class_dsc;  ///< per foreground class, mean over samples with a defined value
  double dsc = 0.0;               ///< mean over all defined (sample, class) entries
  double jaccard = 0.0;
  std::optional<double> hd95;
  std::optional<double> asd;
};

DatasetMetrics aggregate(const std::vector<MetricReport>& reports, int n_classes);

}  // namespace adamix
