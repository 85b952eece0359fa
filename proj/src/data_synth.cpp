#include "adamix/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace adamix {

namespace {

constexpr double kNoiseSigma = 0.1;
constexpr int kMinImageSize = 24;
constexpr int kMargin = 2;  // gap kept between shape bounding boxes

// Sizes are fractions of the image side so the generator scales with image_size.
constexpr double kMinRadius = 0.09;
constexpr double kMaxRadius = 0.2;
constexpr double kMinHalf = 0.07;
constexpr double kMaxHalf = 0.2;

struct Box {
  int y0, x0, y1, x1;  // inclusive
  bool overlaps(const Box& o, int margin) const {
    return !(y1 + margin < o.y0 || o.y1 + margin < y0 || x1 + margin < o.x0 || o.x1 + margin < x0);
  }
};

Box bounding_box(const ShapeInfo& s) {
  if (s.kind == ShapeKind::Disk) {
    const int r = static_cast<int>(std::floor(s.radius));
    return {s.cy - r, s.cx - r, s.cy + r, s.cx + r};
  }
  return {s.cy - s.half_h, s.cx - s.half_w, s.cy + s.half_h, s.cx + s.half_w};
}

std::mt19937_64 sample_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return std::mt19937_64(seq);
}

ShapeInfo random_shape(ShapeKind kind, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ShapeInfo s;
  s.kind = kind;
  int extent_y = 0;
  int extent_x = 0;
  if (kind == ShapeKind::Disk) {
    s.radius = size * (kMinRadius + (kMaxRadius - kMinRadius) * unit(rng));
    extent_y = extent_x = static_cast<int>(std::floor(s.radius));
  } else {
    const int lo = std::max(2, static_cast<int>(std::lround(size * kMinHalf)));
    const int hi = std::max(lo, static_cast<int>(std::lround(size * kMaxHalf)));
    std::uniform_int_distribution<int> half(lo, hi);
    s.half_h = half(rng);
    s.half_w = half(rng);
    extent_y = s.half_h;
    extent_x = s.half_w;
  }
  std::uniform_int_distribution<int> cy(extent_y + 1, size - 2 - extent_y);
  std::uniform_int_distribution<int> cx(extent_x + 1, size - 2 - extent_x);
  s.cy = cy(rng);
  s.cx = cx(rng);
  std::uniform_real_distribution<double> offset(0.15, 0.35);
  s.intensity_offset = offset(rng);
  return s;
}

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0) / 255.0);
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::uint32_t crc32_of(const std::string& s) {
  return crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%05d", index);
  return buf;
}

nlohmann::json shape_to_json(const ShapeInfo& s) {
  nlohmann::json j{{"kind", s.kind == ShapeKind::Disk ? "disk" : "rectangle"},
                   {"cy", s.cy},
                   {"cx", s.cx},
                   {"intensity_offset", s.intensity_offset}};
  if (s.kind == ShapeKind::Disk) {
    j["radius"] = s.radius;
  } else {
    j["half_h"] = s.half_h;
    j["half_w"] = s.half_w;
  }
  return j;
}

ShapeInfo shape_from_json(const nlohmann::json& j) {
  ShapeInfo s;
  const std::string kind = j.at("kind");
  if (kind == "disk") {
    s.kind = ShapeKind::Disk;
    s.radius = j.at("radius");
  } else if (kind == "rectangle") {
    s.kind = ShapeKind::Rectangle;
    s.half_h = j.at("half_h");
    s.half_w = j.at("half_w");
  } else {
    throw FormatError("manifest: unknown shape kind " + kind);
  }
  s.cy = j.at("cy");
  s.cx = j.at("cx");
  s.intensity_offset = j.at("intensity_offset");
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::TrainLabeled:
      return "train_labeled";
    case Split::TrainUnlabeled:
      return "train_unlabeled";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits) {
    if (to_string(s) == name) return s;
  }
  throw PreconditionError("unknown split: " + std::string(name));
}

bool ShapeInfo::contains(int y, int x) const {
  const double dy = y - cy;
  const double dx = x - cx;
  if (kind == ShapeKind::Disk) return dy * dy + dx * dx <= radius * radius;
  return std::abs(dy) <= half_h && std::abs(dx) <= half_w;
}

void validate(const DatasetSpec& spec) {
  if (spec.n_train < 1 || spec.n_val < 0 || spec.n_test < 0) {
    throw PreconditionError("dataset: n_train must be positive and n_val, n_test non-negative");
  }
  if (!(spec.labeled_fraction > 0.0 && spec.labeled_fraction <= 1.0)) {
    throw PreconditionError("dataset: labeled_fraction must lie in (0, 1]");
  }
  if (spec.image_size < kMinImageSize || spec.image_size > 4096) {
    throw PreconditionError("dataset: image_size " + std::to_string(spec.image_size) +
                            " too small for two non-overlapping shapes (minimum " + std::to_string(kMinImageSize) +
                            ")");
  }
  if (spec.n_classes != 3) throw PreconditionError("dataset: the shape generator produces exactly 3 classes");
}

int labeled_count(const DatasetSpec& spec) {
  return std::max(1, static_cast<int>(std::lround(spec.labeled_fraction * spec.n_train)));
}

Split split_of(const DatasetSpec& spec, int index) {
  if (index < 0 || index >= spec.n_train + spec.n_val + spec.n_test) {
    throw PreconditionError("dataset: sample index out of range");
  }
  if (index < labeled_count(spec)) return Split::TrainLabeled;
  if (index < spec.n_train) return Split::TrainUnlabeled;
  if (index < spec.n_train + spec.n_val) return Split::Val;
  return Split::Test;
}

SampleRecord generate_sample(const DatasetSpec& spec, int index) {
  validate(spec);
  const int size = spec.image_size;
  SampleRecord rec;
  rec.id = sample_id(index);
  rec.split = split_of(spec, index);
  std::mt19937_64 rng = sample_rng(spec.seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int count = unit(rng) < 0.5 ? 1 : 2;
  for (int k = 0; k < count; ++k) {
    const ShapeKind kind = unit(rng) < 0.5 ? ShapeKind::Disk : ShapeKind::Rectangle;
    for (int attempt = 0; attempt < 100; ++attempt) {
      ShapeInfo s = random_shape(kind, size, rng);
      const Box b = bounding_box(s);
      const bool clash = std::any_of(rec.shapes.begin(), rec.shapes.end(),
                                     [&](const ShapeInfo& o) { return b.overlaps(bounding_box(o), kMargin); });
      if (!clash) {
        rec.shapes.push_back(s);
        break;
      }
    }
  }

  // Background: base level plus a few low-frequency waves.
  const double base = 0.25 + 0.15 * unit(rng);
  struct Wave {
    double fy, fx, phase, amp;
  };
  Wave waves[3];
  for (Wave& w : waves) {
    const double freq = 2.0 * std::numbers::pi * (1.0 + 3.0 * unit(rng)) / size;
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    w = {freq * std::sin(angle), freq * std::cos(angle), 2.0 * std::numbers::pi * unit(rng), 0.04 + 0.04 * unit(rng)};
  }

  rec.image = Image(1, size, size);
  rec.label = LabelMap(1, size, size);
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = base;
      for (const Wave& w : waves) v += w.amp * std::sin(w.fy * y + w.fx * x + w.phase);
      for (const ShapeInfo& s : rec.shapes) {
        if (s.contains(y, x)) {
          v += s.intensity_offset;
          rec.label.at(y, x) = static_cast<std::uint8_t>(s.label());
        }
      }
      rec.image.at(y, x) = quantize(v + noise(rng));
    }
  }
  return rec;
}

std::vector<SampleRecord> generate(const DatasetSpec& spec) {
  validate(spec);
  const int total = spec.n_train + spec.n_val + spec.n_test;
  std::vector<SampleRecord> out;
  out.reserve(total);
  for (int i = 0; i < total; ++i) out.push_back(generate_sample(spec, i));
  return out;
}

nlohmann::json to_json(const DatasetSpec& spec) {
  return {{"n_train", spec.n_train},
          {"n_val", spec.n_val},
          {"n_test", spec.n_test},
          {"labeled_fraction", spec.labeled_fraction},
          {"image_size", spec.image_size},
          {"n_classes", spec.n_classes},
          {"seed", spec.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.n_train = j.value("n_train", s.n_train);
  s.n_val = j.value("n_val", s.n_val);
  s.n_test = j.value("n_test", s.n_test);
  s.labeled_fraction = j.value("labeled_fraction", s.labeled_fraction);
  s.image_size = j.value("image_size", s.image_size);
  s.n_classes = j.value("n_classes", s.n_classes);
  s.seed = j.value("seed", s.seed);
  validate(s);
  return s;
}

void write_pgm(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width) throw ShapeError("pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& height, int& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || maxval != 255 || width <= 0 || height <= 0) {
    throw FormatError("not an 8-bit binary PGM: " + path.string());
  }
  in.get();  // single whitespace after the header
  std::vector<std::uint8_t> px(static_cast<std::size_t>(height) * width);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) throw FormatError("truncated PGM: " + path.string());
  return px;
}

void export_dataset(const std::vector<SampleRecord>& records, const DatasetSpec& spec,
                    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  nlohmann::json samples = nlohmann::json::array();
  for (const SampleRecord& r : records) {
    const int h = r.image.height();
    const int w = r.image.width();
    std::vector<std::uint8_t> img(r.image.plane_size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      img[i] = static_cast<std::uint8_t>(std::lround(std::clamp(r.image.data()[i], 0.0f, 1.0f) * 255.0f));
    }
    std::vector<std::uint8_t> lab(r.label.data().begin(), r.label.data().end());
    const std::string img_rel = "images/" + r.id + ".pgm";
    const std::string lab_rel = "labels/" + r.id + ".pgm";
    write_pgm(dir / img_rel, h, w, img);
    write_pgm(dir / lab_rel, h, w, lab);
    nlohmann::json shapes = nlohmann::json::array();
    for (const ShapeInfo& s : r.shapes) shapes.push_back(shape_to_json(s));
    samples.push_back({{"id", r.id},
                       {"split", to_string(r.split)},
                       {"image", img_rel},
                       {"label", lab_rel},
                       {"image_crc32", hex32(crc32_of(read_file(dir / img_rel)))},
                       {"label_crc32", hex32(crc32_of(read_file(dir / lab_rel)))},
                       {"shapes", shapes}});
  }
  nlohmann::json manifest{{"format_version", kDatasetFormatVersion}, {"spec", to_json(spec)}, {"samples", samples}};
  manifest["checksum"] = hex32(crc32_of(manifest.dump()));
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest in " + dir.string());
}

ImportedDataset import_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("missing manifest.json in " + dir.string());
    try {
      manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("corrupt manifest: ") + e.what());
    }
  }
  try {
    if (manifest.at("format_version") != kDatasetFormatVersion) {
      throw FormatError("unsupported dataset format_version");
    }
    const std::string stated = manifest.at("checksum");
    nlohmann::json body = manifest;
    body.erase("checksum");
    if (hex32(crc32_of(body.dump())) != stated) throw FormatError("manifest checksum mismatch");

    ImportedDataset out;
    out.spec = dataset_spec_from_json(manifest.at("spec"));
    for (const auto& s : manifest.at("samples")) {
      SampleRecord r;
      r.id = s.at("id");
      r.split = parse_split(s.at("split").get<std::string>());
      for (const char* key : {"image", "label"}) {
        const auto bytes = read_file(dir / s.at(key).get<std::string>());
        if (hex32(crc32_of(bytes)) != s.at(std::string(key) + "_crc32")) {
          throw FormatError("checksum mismatch for " + s.at(key).get<std::string>());
        }
      }
      int h = 0, w = 0, lh = 0, lw = 0;
      const auto img = read_pgm(dir / s.at("image").get<std::string>(), h, w);
      const auto lab = read_pgm(dir / s.at("label").get<std::string>(), lh, lw);
      if (h != lh || w != lw) throw FormatError("image/label size mismatch for " + r.id);
      r.image = Image(1, h, w);
      for (std::size_t i = 0; i < img.size(); ++i) r.image.data()[i] = static_cast<float>(img[i] / 255.0);
      r.label = LabelMap(1, h, w, lab);
      for (std::uint8_t v : lab) {
        if (v >= out.spec.n_classes) throw FormatError("label value out of range in " + r.id);
      }
      for (const auto& sj : s.at("shapes")) r.shapes.push_back(shape_from_json(sj));
      out.records.push_back(std::move(r));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("invalid manifest: ") + e.what());
  }
}

Dataset::Dataset(std::vector<SampleRecord> records) : records_(std::move(records)) {
  for (int i = 0; i < static_cast<int>(records_.size()); ++i) {
    by_split_[static_cast<int>(records_[i].split)].push_back(i);
  }
}

const LabelMap& Dataset::label(int index) const {
  const SampleRecord& r = records_.at(index);
  ++label_reads_[static_cast<int>(r.split)];
  return r.label;
}

}  // namespace adamix
