#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "adamix/tensor.hpp"

namespace adamix {

struct DatasetSpec {
  int n_train = 200;
  int n_val = 40;
  int n_test = 40;
  double labeled_fraction = 0.1;
  int image_size = 64;
  int n_classes = 3;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

enum class Split { TrainLabeled, TrainUnlabeled, Val, Test };
inline constexpr std::array<Split, 4> kAllSplits = {Split::TrainLabeled, Split::TrainUnlabeled, Split::Val,
                                                    Split::Test};

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

enum class ShapeKind { Disk, Rectangle };

/// Geometry of one rendered shape. Disk: |p - c| <= radius. Rectangle: |dy| <= half_h, |dx| <= half_w.
struct ShapeInfo {
  ShapeKind kind = ShapeKind::Disk;
  int cy = 0;
  int cx = 0;
  double radius = 0.0;
  int half_h = 0;
  int half_w = 0;
  double intensity_offset = 0.0;

  bool contains(int y, int x) const;
  int label() const { return kind == ShapeKind::Disk ? 1 : 2; }
  friend bool operator==(const ShapeInfo&, const ShapeInfo&) = default;
};

struct SampleRecord {
  std::string id;
  Image image;
  LabelMap label;
  Split split = Split::TrainLabeled;
  std::vector<ShapeInfo> shapes;
};

/// Throws PreconditionError for an infeasible or inconsistent spec.
void validate(const DatasetSpec& spec);

/// round(labeled_fraction * n_train), at least 1.
int labeled_count(const DatasetSpec& spec);

Split split_of(const DatasetSpec& spec, int index);

/// Pure function of (spec.seed, index).
SampleRecord generate_sample(const DatasetSpec& spec, int index);

std::vector<SampleRecord> generate(const DatasetSpec& spec);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

inline constexpr int kDatasetFormatVersion = 1;

/// Writes images/<id>.pgm, labels/<id>.pgm (8-bit P5) and manifest.json.
void export_dataset(const std::vector<SampleRecord>& records, const DatasetSpec& spec,
                    const std::filesystem::path& dir);

struct ImportedDataset {
  DatasetSpec spec;
  std::vector<SampleRecord> records;
};

/// Validates the manifest checksum and every file checksum.
ImportedDataset import_dataset(const std::filesystem::path& dir);

/// Read-access wrapper that counts label reads per split, so tests can prove
/// training never looks at unlabeled ground truth.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<SampleRecord> records);

  std::size_t size() const { return records_.size(); }
  const std::vector<int>& indices(Split s) const { return by_split_[static_cast<int>(s)]; }
  const SampleRecord& meta(int index) const { return records_.at(index); }
  const Image& image(int index) const { return records_.at(index).image; }
  const LabelMap& label(int index) const;
  std::int64_t label_reads(Split s) const { return label_reads_[static_cast<int>(s)]; }

 private:
  std::vector<SampleRecord> records_;
  std::array<std::vector<int>, 4> by_split_;
  mutable std::array<std::int64_t, 4> label_reads_{};
};

// PGM (P5, maxval 255) helpers.
void write_pgm(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& pixels);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& height, int& width);

}  // namespace adamix
