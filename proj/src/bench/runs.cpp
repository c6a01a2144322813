#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bench_io.hpp"
#include "ssmvis/bench.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/rng.hpp"

namespace ssmvis::bench {

namespace fs = std::filesystem;

void write_text_atomic(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path ResultPaths::run(std::string_view id, std::size_t fold) const {
  return root / "runs" / std::string(id) / ("fold_" + std::to_string(fold) + ".tsv");
}

fs::path ResultPaths::checkpoint(std::string_view id, std::size_t fold) const {
  return root / "checkpoints" / std::string(id) / ("fold_" + std::to_string(fold) + ".ckpt");
}

fs::path ResultPaths::history(std::string_view id, std::size_t fold) const {
  return root / "history" / std::string(id) / ("fold_" + std::to_string(fold) + ".tsv");
}

data::DatasetManifest load_manifest(const DatasetConfig& ds) {
  if (ds.source == data::SourceKind::synthetic) {
    return data::synth_generate(ds.per_class, ds.classes, ds.image_size, ds.seed, ds.noise);
  }
  if (ds.roots.empty()) throw ConfigError("directory dataset without roots");
  auto merged = data::load_dataset(ds.roots.front().path, ds.roots.front().layout);
  for (std::size_t i = 1; i < ds.roots.size(); ++i) {
    merged = data::union_manifests(merged, data::load_dataset(ds.roots[i].path, ds.roots[i].layout));
  }
  if (merged.classes.size() != ds.classes) {
    std::string names;
    for (const auto& c : merged.classes) names += (names.empty() ? "" : ", ") + c;
    throw ConfigError("dataset.classes is " + std::to_string(ds.classes) + " but the data has " +
                      std::to_string(merged.classes.size()) + " classes (" + names + ")");
  }
  return merged;
}

ImageCache ImageCache::build(const DatasetConfig& dataset) {
  ImageCache cache;
  cache.manifest = load_manifest(dataset);
  cache.manifest.validate();
  cache.images.reserve(cache.manifest.size());
  for (std::size_t i = 0; i < cache.manifest.size(); ++i) {
    cache.images.push_back(data::sample_image(cache.manifest, i, dataset.image_size));
  }
  return cache;
}

train::Examples ImageCache::examples(const std::vector<std::size_t>& indices) const {
  train::Examples ex;
  ex.images.reserve(indices.size());
  ex.labels.reserve(indices.size());
  for (const auto i : indices) {
    ex.images.push_back(images.at(i));
    ex.labels.push_back(manifest.samples.at(i).label);
  }
  return ex;
}

std::string format_run_result(const stats::RunResult& run, std::uint64_t hash) {
  std::ostringstream o;
  o << "# encoder " << run.encoder_id << '\n'
    << "# seed " << run.seed << '\n'
    << "# fold " << run.fold << '\n'
    << "# classes " << run.num_classes() << '\n'
    << "# config_hash " << hash_hex(hash) << '\n';
  for (std::size_t i = 0; i < run.size(); ++i) {
    o << run.labels[i] << '\t' << run.predicted[i] << '\t';
    for (std::size_t c = 0; c < run.scores[i].size(); ++c) o << (c ? "," : "") << format_double(run.scores[i][c]);
    o << '\n';
  }
  return o.str();
}

namespace {

template <class T>
T parse_number(std::string_view s, std::string_view what, std::size_t line) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw DataError("line " + std::to_string(line) + ": bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

double parse_score(std::string_view s, std::size_t line) {
  // from_chars for double is not available in libstdc++ 11.
  const std::string copy(s);
  char* end = nullptr;
  const double v = std::strtod(copy.c_str(), &end);
  if (copy.empty() || end != copy.c_str() + copy.size() || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line) + ": bad score '" + copy + "'");
  }
  return v;
}

}  // namespace

StoredRun parse_run_result(std::string_view text) {
  StoredRun out;
  auto& r = out.run;
  bool seen_hash = false, seen_encoder = false, seen_fold = false;
  std::size_t classes = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto start = line.find_first_not_of("# ");
      if (start == std::string_view::npos) continue;
      const auto body = line.substr(start);
      const auto sp = static_cast<std::size_t>(std::find(body.begin(), body.end(), ' ') - body.begin());
      const auto key = body.substr(0, sp);
      const auto value = sp == body.size() ? std::string_view{} : body.substr(sp + 1);
      if (key == "encoder") {
        r.encoder_id = std::string(value);
        seen_encoder = true;
      } else if (key == "seed") {
        r.seed = parse_number<std::uint64_t>(value, "seed", line_no);
      } else if (key == "fold") {
        r.fold = parse_number<std::size_t>(value, "fold", line_no);
        seen_fold = true;
      } else if (key == "classes") {
        classes = parse_number<std::size_t>(value, "class count", line_no);
      } else if (key == "config_hash") {
        std::uint64_t h = 0;
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), h, 16);
        if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty()) {
          throw DataError("line " + std::to_string(line_no) + ": bad config hash");
        }
        out.config_hash = h;
        seen_hash = true;
      }
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw DataError("line " + std::to_string(line_no) + ": expected label<TAB>pred<TAB>scores");
    }
    r.labels.push_back(parse_number<int>(line.substr(0, t1), "label", line_no));
    r.predicted.push_back(parse_number<int>(line.substr(t1 + 1, t2 - t1 - 1), "prediction", line_no));
    std::vector<double> row;
    std::string_view rest = line.substr(t2 + 1);
    while (true) {
      const auto comma = rest.find(',');
      row.push_back(parse_score(rest.substr(0, comma), line_no));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    r.scores.push_back(std::move(row));
  }
  if (!seen_encoder || !seen_fold || !seen_hash) throw DataError("run result lacks encoder, fold or config_hash header");
  if (r.labels.empty()) throw DataError("run result has no samples");
  if (classes != 0 && r.num_classes() != classes) throw DataError("run result score width differs from its class count");
  r.validate();
  return out;
}

stats::RunResult execute_run(const BenchmarkConfig& config, const ImageCache& cache, const RosterEntry& entry,
                             std::size_t fold, const ResultPaths& paths) {
  const std::uint64_t fold_seed = config.fold_seed(fold);
  auto outcome = train_and_test(config, cache, entry, fold_seed);
  outcome.run.fold = fold;
  const std::uint64_t hash = config_hash(config);

  encoders::CheckpointFile ckpt{entry.spec, outcome.trained.best.weights.snapshot(), outcome.metadata};
  ckpt.metadata["fold"] = std::to_string(fold);
  ckpt.metadata["config_hash"] = hash_hex(hash);
  fs::create_directories(paths.checkpoint(entry.id, fold).parent_path());
  encoders::write_checkpoint(paths.checkpoint(entry.id, fold), ckpt);
  write_text_atomic(paths.history(entry.id, fold), train::format_history(outcome.trained.history));
  // The run file goes last: its presence marks the run as complete.
  write_text_atomic(paths.run(entry.id, fold), format_run_result(outcome.run, hash));
  return outcome.run;
}

RunOutcome train_and_test(const BenchmarkConfig& config, const ImageCache& cache, const RosterEntry& entry,
                          std::uint64_t fold_seed) {
  // One split per fold seed; every encoder in the fold sees the same one.
  const auto split = data::stratified_split(cache.manifest, fold_seed, config.fractions);
  const train::DataSplit ds{cache.examples(split.train), cache.examples(split.val)};
  const auto test = cache.examples(split.test);

  train::TrainConfig tc = config.train;
  tc.seed = derive_seed(fold_seed, entry.id);

  RunOutcome out;
  out.trained = train::train_run(entry.spec, ds, tc);
  const auto ev = train::evaluate(entry.spec, out.trained.best.weights, test);

  out.run.encoder_id = entry.id;
  out.run.seed = fold_seed;
  out.run.labels = test.labels;
  out.run.predicted = ev.predicted;
  out.run.scores = ev.scores;
  out.run.validate();

  const auto& best = out.trained.best;
  out.metadata = {{"encoder", entry.id},
                  {"seed", std::to_string(fold_seed)},
                  {"init_seed", std::to_string(tc.seed)},
                  {"epoch", std::to_string(best.epoch)},
                  {"val_accuracy", format_double(best.val_accuracy)},
                  {"val_loss", format_double(best.val_loss)},
                  {"test_accuracy", format_double(ev.accuracy)}};
  return out;
}

}  // namespace ssmvis::bench
