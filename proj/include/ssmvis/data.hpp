#pragma once

// Dataset ingestion: directory layouts, manifest files, a synthetic
// generator, image decoding/preprocessing and stratified splitting.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssmvis/tensor.hpp"

namespace ssmvis::data {

/// busi: benign/, malignant/, normal/ subdirectories.
/// b: exactly two class subdirectories.
/// manifest_file: a text manifest (see read_manifest).
enum class Layout { busi, b, manifest_file };

Layout parse_layout(std::string_view name);

enum class SourceKind { directory, synthetic };

struct Sample {
  std::string path;  // file path, or a synthetic identifier
  Tensor pixels;     // inline [H, W, 1] data for synthetic samples; undefined otherwise
  int label = 0;
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> classes;
  std::vector<Sample> samples;
  SourceKind source = SourceKind::directory;

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> class_counts() const;
  /// Throws DataError unless labels are in range, there are >= 2 classes
  /// and every class has at least one sample.
  void validate() const;
};

/// 8-bit binary PGM (P5) or 8-bit PNG (gray or RGB; RGB collapsed with luma
/// weights 0.299/0.587/0.114). Returns [H, W, 1] scaled to [0, 1].
Tensor decode_image(std::span<const std::uint8_t> bytes);

/// Reads and decodes a file; errors carry the path.
Tensor load_image(const std::filesystem::path& path);

/// Bilinear resize with half-pixel centers (edge samples clamped).
Tensor resize_bilinear(const Tensor& image, std::size_t target);

/// Bilinear resize to target x target, then per-image
/// standardization to mean 0, std 1 with a std floor of 1e-6.
Tensor preprocess(const Tensor& image, std::size_t target);

/// Lexicographically ordered samples. Files whose name contains "_mask"
/// are skipped; only .png and .pgm files are considered.
DatasetManifest load_dataset(const std::filesystem::path& root, Layout layout);

/// Header line `classes: a,b,c`, then `path<TAB>label_index` rows. Relative
/// paths resolve against the manifest's directory. Blank lines and lines
/// starting with '#' are ignored.
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);

/// Merges by class name: classes of `a` first, then unseen classes of `b`;
/// samples of `a` then `b` with labels remapped.
DatasetManifest union_manifests(const DatasetManifest& a, const DatasetManifest& b);

/// Materialized pixels for sample i (inline data or decoded from disk),
/// preprocessed to target x target.
Tensor sample_image(const DatasetManifest& manifest, std::size_t index, std::size_t target);

struct Fractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  Fractions fractions;
  std::uint64_t seed = 0;
};

/// Per class (in class order): shuffle that class's indices with a
/// generator seeded once by `seed`, give round(train * n) to train and
/// round(val * n) to val (rounding half away from zero, clamped so every
/// part gets at least one sample), and the rest to test. Index lists are
/// returned sorted. Throws DataError if a class has fewer than 3 samples.
SplitAssignment stratified_split(const DatasetManifest& manifest, std::uint64_t seed, Fractions fractions = {});

/// Balanced synthetic grayscale classes with pixel noise. Class 0 is a round
/// blob; the other classes are elongated blobs whose orientation is spread
/// evenly over [0, pi) by class index. Blob position, size and contrast are
/// jittered per image.
DatasetManifest synth_generate(std::size_t num_per_class, std::size_t classes, std::size_t image_size,
                               std::uint64_t seed, double noise = 0.05);

}  // namespace ssmvis::data
