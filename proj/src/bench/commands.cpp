#include <algorithm>
#include <atomic>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "bench_io.hpp"
#include "ssmvis/bench.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::bench {

namespace fs = std::filesystem;

namespace {

template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const train::DivergenceError& e) {
    err << "error: training " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "error: numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    // Data, shape and filesystem problems are all fixable by the caller.
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

struct Job {
  std::size_t fold;
  const RosterEntry* entry;
};

bool run_complete(const ResultPaths& paths, const Job& job, std::uint64_t hash) {
  const auto path = paths.run(job.entry->id, job.fold);
  if (!fs::exists(path) || !fs::exists(paths.checkpoint(job.entry->id, job.fold))) return false;
  try {
    const auto stored = parse_run_result(read_text(path));
    return stored.config_hash == hash && stored.run.fold == job.fold && stored.run.encoder_id == job.entry->id;
  } catch (const std::exception&) {
    return false;  // damaged file; train again
  }
}

// Reads the hash a report was written for, if the report exists.
std::optional<std::string> report_hash(const fs::path& report) {
  if (!fs::exists(report)) return std::nullopt;
  std::istringstream in(read_text(report));
  std::string line;
  const std::string marker = "- config hash: `";
  while (std::getline(in, line)) {
    if (line.rfind(marker, 0) == 0) return line.substr(marker.size(), line.find('`', marker.size()) - marker.size());
  }
  return std::string{};
}

BenchmarkConfig load_results_config(const ResultPaths& paths) {
  if (!fs::is_directory(paths.root)) throw DataError("results directory " + paths.root.string() + " does not exist");
  if (!fs::exists(paths.config())) {
    throw DataError("no benchmark results in " + paths.root.string() + " (config.yaml missing)");
  }
  auto config = load_config(paths.config());
  const auto expected = hash_hex(config_hash(config));
  if (const auto h = report_hash(paths.report("md")); h && *h != expected) {
    throw DataError(paths.report("md").string() + " was written for config hash " + *h + ", but " +
                    paths.config().string() + " hashes to " + expected);
  }
  return config;
}

}  // namespace

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto config = load_config(options.config);
    const auto& entry = config.entry(options.encoder_id);
    const fs::path dir = options.out.value_or(config.output_dir / "train");
    const auto cache = ImageCache::build(config.dataset);
    auto outcome = train_and_test(config, cache, entry, options.seed);

    const std::string stem = entry.id + "_seed" + std::to_string(options.seed);
    fs::create_directories(dir);
    encoders::CheckpointFile ckpt{entry.spec, outcome.trained.best.weights.snapshot(), outcome.metadata};
    ckpt.metadata["config_hash"] = hash_hex(config_hash(config));
    encoders::write_checkpoint(dir / (stem + ".ckpt"), ckpt);
    write_text_atomic(dir / (stem + "_history.tsv"), train::format_history(outcome.trained.history));
    write_text_atomic(dir / (stem + "_run.tsv"), format_run_result(outcome.run, config_hash(config)));

    const auto& best = outcome.trained.best;
    out << entry.id << " seed " << options.seed << ": best epoch " << best.epoch << " of "
        << outcome.trained.history.size() << ", val accuracy " << best.val_accuracy << ", test accuracy "
        << stats::accuracy(outcome.run) << '\n'
        << "checkpoint: " << (dir / (stem + ".ckpt")).string() << '\n';
    return int{kExitOk};
  });
}

int cmd_benchmark(const BenchmarkOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto config = load_config(options.config);
    if (options.out) config.output_dir = *options.out;
    if (options.workers) config.workers = *options.workers;
    config.validate();
    const ResultPaths paths{config.output_dir};
    const std::uint64_t hash = config_hash(config);

    fs::create_directories(paths.root);
    if (fs::exists(paths.config())) {
      const auto previous = load_config(paths.config());
      if (config_hash(previous) != hash) {
        throw ConfigError(paths.root.string() + " holds results for config " + hash_hex(config_hash(previous)) +
                          ", not " + hash_hex(hash) + "; pick another --out");
      }
    }
    write_text_atomic(paths.config(), read_text(options.config));

    std::vector<Job> jobs;
    for (std::size_t fold = 0; fold < config.n_seeds; ++fold) {
      for (const auto& e : config.roster) jobs.push_back({fold, &e});
    }
    std::vector<Job> todo;
    std::copy_if(jobs.begin(), jobs.end(), std::back_inserter(todo),
                 [&](const Job& j) { return !run_complete(paths, j, hash); });
    if (todo.size() < jobs.size()) {
      out << "resuming: " << jobs.size() - todo.size() << " of " << jobs.size() << " runs already complete\n";
    }

    std::vector<int> status(todo.size(), 0);  // 0 pending, 1 done, 2 failed
    std::optional<std::size_t> failed_job;
    std::exception_ptr failure;
    if (!todo.empty()) {
      const auto cache = ImageCache::build(config.dataset);
      std::atomic<std::size_t> next{0};
      std::atomic<bool> stop{false};
      std::mutex mu;
      std::size_t finished = 0;
      auto worker = [&] {
        while (!stop.load()) {
          const std::size_t k = next.fetch_add(1);
          if (k >= todo.size()) return;
          const auto& job = todo[k];
          try {
            const auto run = execute_run(config, cache, *job.entry, job.fold, paths);
            std::lock_guard lock(mu);
            status[k] = 1;
            out << '[' << ++finished << '/' << todo.size() << "] " << job.entry->id << " fold " << job.fold
                << " (seed " << config.fold_seed(job.fold) << "): test accuracy " << stats::accuracy(run) << '\n'
                << std::flush;
          } catch (...) {
            std::lock_guard lock(mu);
            status[k] = 2;
            // Keep the earliest failing job so the reported error is stable.
            if (!failed_job || k < *failed_job) {
              failed_job = k;
              failure = std::current_exception();
            }
            stop = true;
          }
        }
      };
      const std::size_t n_workers = std::min(config.workers, todo.size());
      std::vector<std::thread> pool;
      for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
      worker();
      for (auto& t : pool) t.join();
    }

    std::ostringstream state;
    state << "config_hash " << hash_hex(hash) << '\n';
    for (const auto& job : jobs) {
      const auto it = std::find_if(todo.begin(), todo.end(),
                                   [&](const Job& t) { return t.fold == job.fold && t.entry == job.entry; });
      const int s = it == todo.end() ? 1 : status[static_cast<std::size_t>(it - todo.begin())];
      state << (s == 1 ? "done" : s == 2 ? "failed" : "pending") << ' ' << job.entry->id << ' ' << job.fold << '\n';
    }
    write_text_atomic(paths.state(), state.str());

    if (failure) {
      const auto& job = todo[*failed_job];
      err << "run " << job.entry->id << " fold " << job.fold << " failed; completed runs are kept, rerun to resume\n";
      std::rethrow_exception(failure);
    }

    const auto report = build_report(config, paths);
    const auto markdown = render_markdown(report);
    write_text_atomic(paths.report("md"), markdown);
    write_text_atomic(paths.report("csv"), render_csv(report));
    if (report.significance) write_text_atomic(paths.significance(), format_significance_csv(*report.significance));
    out << markdown;
    return int{kExitOk};
  });
}

int cmd_compare(const fs::path& results_dir, double alpha, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ResultPaths paths{results_dir};
    const auto config = load_results_config(paths);
    if (config.roster.size() < 2) throw ConfigError("compare needs at least two encoders in the roster");
    const auto runs = load_runs(config, paths);
    const auto m = stats::significance_matrix(runs, alpha);
    const auto csv = format_significance_csv(m);
    write_text_atomic(paths.significance(), csv);
    out << "paired t-test p-values on per-sample correctness (alpha=" << alpha << ")\n" << csv;
    const auto lines = verdict_lines(m);
    if (lines.empty()) out << "no significant differences\n";
    for (const auto& l : lines) out << l << '\n';
    return int{kExitOk};
  });
}

int cmd_report(const fs::path& results_dir, ReportFormat format, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ResultPaths paths{results_dir};
    const auto config = load_results_config(paths);
    const auto report = build_report(config, paths);
    const bool md = format == ReportFormat::markdown;
    const auto text = md ? render_markdown(report) : render_csv(report);
    write_text_atomic(paths.report(md ? "md" : "csv"), text);
    out << text;
    return int{kExitOk};
  });
}

}  // namespace ssmvis::bench
