#pragma once

// Benchmark harness behind the command-line tool: configuration, the
// multi-seed protocol, persisted run results and table-style reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssmvis/data.hpp"
#include "ssmvis/encoders.hpp"
#include "ssmvis/stats.hpp"
#include "ssmvis/train.hpp"

namespace ssmvis::bench {

/// Process exit codes; a stable contract for scripts and CI.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3 };

struct DatasetRoot {
  std::filesystem::path path;  // resolved
  std::string written;         // as it appears in the config; hashed
  data::Layout layout = data::Layout::busi;
};

struct DatasetConfig {
  data::SourceKind source = data::SourceKind::synthetic;
  std::size_t image_size = 32;
  // synthetic
  std::size_t per_class = 64;
  std::size_t classes = 3;  // also checked against directory datasets
  std::uint64_t seed = 0;
  double noise = 0.05;
  // directory: one or more roots, merged by class name
  std::vector<DatasetRoot> roots;
};

struct RosterEntry {
  std::string id;
  encoders::EncoderSpec spec;
};

struct BenchmarkConfig {
  DatasetConfig dataset;
  std::vector<RosterEntry> roster;
  train::TrainConfig train;
  data::Fractions fractions;
  std::size_t n_seeds = 5;
  std::uint64_t base_seed = 0;
  std::filesystem::path output_dir = "results";
  std::size_t workers = 1;

  /// Throws ConfigError.
  void validate() const;
  const RosterEntry& entry(std::string_view id) const;  // ConfigError listing the roster
  std::uint64_t fold_seed(std::size_t fold) const { return base_seed + fold; }
};

/// YAML document with `dataset`, `train`, `benchmark` and `encoders`
/// sections. Unknown keys are errors. Relative dataset paths resolve
/// against `base_dir`.
BenchmarkConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
BenchmarkConfig load_config(const std::filesystem::path& path);

/// Resolved settings that affect results, one per line. Output location and
/// worker count are excluded.
std::string canonical_text(const BenchmarkConfig& config);
/// FNV-1a 64 of canonical_text.
std::uint64_t config_hash(const BenchmarkConfig& config);
std::string hash_hex(std::uint64_t hash);

/// Dataset described by the config, images not yet decoded.
data::DatasetManifest load_manifest(const DatasetConfig& dataset);

/// Preprocessed images of every sample, decoded once and shared by all runs.
struct ImageCache {
  data::DatasetManifest manifest;
  std::vector<Tensor> images;

  static ImageCache build(const DatasetConfig& dataset);
  train::Examples examples(const std::vector<std::size_t>& indices) const;
};

/// Layout of a results directory.
struct ResultPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.yaml"; }
  std::filesystem::path state() const { return root / "state.txt"; }
  std::filesystem::path report(std::string_view ext) const { return root / ("report." + std::string(ext)); }
  std::filesystem::path significance() const { return root / "significance.csv"; }
  std::filesystem::path run(std::string_view id, std::size_t fold) const;
  std::filesystem::path checkpoint(std::string_view id, std::size_t fold) const;
  std::filesystem::path history(std::string_view id, std::size_t fold) const;
};

/// Line-oriented text: `# key value` header lines (encoder, seed, fold,
/// classes, config_hash) then `label<TAB>pred<TAB>s0,s1,...` per sample.
std::string format_run_result(const stats::RunResult& run, std::uint64_t config_hash);

struct StoredRun {
  stats::RunResult run;
  std::uint64_t config_hash = 0;
};
/// Throws DataError on malformed text.
StoredRun parse_run_result(std::string_view text);

/// Trains `entry` on fold `fold` (split with the fold seed, weights from a
/// seed derived from the fold seed and the encoder id), evaluates on the
/// fold's test part and writes the run, checkpoint and history files.
stats::RunResult execute_run(const BenchmarkConfig& config, const ImageCache& cache, const RosterEntry& entry,
                             std::size_t fold, const ResultPaths& paths);

struct ReportRow {
  std::string family;
  std::string encoder;
  std::size_t params = 0;
  stats::MetricSummary auc;  // scaled to 0..100
  stats::MetricSummary acc;
};

struct Report {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;
  std::optional<stats::SignificanceMatrix> significance;  // needs >= 2 encoders
};

/// Loads every run of every roster entry from `paths`; throws DataError when
/// one is missing, malformed or carries a different config hash.
std::vector<stats::RunResult> load_runs(const BenchmarkConfig& config, const ResultPaths& paths);

Report build_report(const BenchmarkConfig& config, const ResultPaths& paths, double alpha = 0.05);
std::string render_markdown(const Report& report);
std::string render_csv(const Report& report);

/// "X outperforms Y (p=...)" for each significant pair, row order.
std::vector<std::string> verdict_lines(const stats::SignificanceMatrix& matrix);
std::string format_significance_csv(const stats::SignificanceMatrix& matrix);

// ---- commands; each returns an ExitCode and writes diagnostics to `err` ----

struct TrainOptions {
  std::filesystem::path config;
  std::string encoder_id;
  std::uint64_t seed = 0;  // fold seed
  std::optional<std::filesystem::path> out;
};
int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);

struct BenchmarkOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> workers;
};
int cmd_benchmark(const BenchmarkOptions& options, std::ostream& out, std::ostream& err);

int cmd_compare(const std::filesystem::path& results_dir, double alpha, std::ostream& out, std::ostream& err);

enum class ReportFormat { markdown, csv };
int cmd_report(const std::filesystem::path& results_dir, ReportFormat format, std::ostream& out,
               std::ostream& err);

}  // namespace ssmvis::bench
