#pragma once

// Helpers shared by the bench sources; not part of the public API.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "ssmvis/bench.hpp"

namespace ssmvis::bench {

/// Writes via a temporary file and rename so readers never see half a file.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);
std::string format_double(double v);

struct RunOutcome {
  stats::RunResult run;  // fold left at 0
  train::TrainResult trained;
  std::map<std::string, std::string> metadata;
};

/// Split with `fold_seed`, train with a seed derived from it and the encoder
/// id, evaluate on the test part. Writes nothing.
RunOutcome train_and_test(const BenchmarkConfig& config, const ImageCache& cache, const RosterEntry& entry,
                          std::uint64_t fold_seed);

}  // namespace ssmvis::bench
