#include <cstdio>
#include <sstream>

#include "bench_io.hpp"
#include "ssmvis/bench.hpp"
#include "ssmvis/error.hpp"

namespace ssmvis::bench {

namespace fs = std::filesystem;

std::vector<stats::RunResult> load_runs(const BenchmarkConfig& config, const ResultPaths& paths) {
  const std::uint64_t expected = config_hash(config);
  std::vector<stats::RunResult> runs;
  for (std::size_t fold = 0; fold < config.n_seeds; ++fold) {
    for (const auto& e : config.roster) {
      const auto path = paths.run(e.id, fold);
      if (!fs::exists(path)) throw DataError("missing run result " + path.string());
      StoredRun stored;
      try {
        stored = parse_run_result(read_text(path));
      } catch (const DataError& ex) {
        throw DataError(path.string() + ": " + ex.what());
      }
      if (stored.config_hash != expected) {
        throw DataError(path.string() + ": config hash " + hash_hex(stored.config_hash) + " does not match " +
                        hash_hex(expected) + " of " + paths.config().string());
      }
      if (stored.run.encoder_id != e.id || stored.run.fold != fold) {
        throw DataError(path.string() + ": header names encoder '" + stored.run.encoder_id + "' fold " +
                        std::to_string(stored.run.fold));
      }
      runs.push_back(std::move(stored.run));
    }
  }
  return runs;
}

Report build_report(const BenchmarkConfig& config, const ResultPaths& paths, double alpha) {
  const auto runs = load_runs(config, paths);
  Report report;
  report.config_hash = hash_hex(config_hash(config));
  for (std::size_t fold = 0; fold < config.n_seeds; ++fold) report.seeds.push_back(config.fold_seed(fold));

  for (const auto& e : config.roster) {
    std::vector<double> auc, acc;
    for (const auto& r : runs) {
      if (r.encoder_id != e.id) continue;
      auc.push_back(100.0 * stats::ovr_auc(r));
      acc.push_back(100.0 * stats::accuracy(r));
    }
    ReportRow row;
    row.family = std::string(encoders::family_label(e.spec.kind));
    row.encoder = e.id;
    // Counted from the stored weights, not from the spec.
    row.params = encoders::read_checkpoint(paths.checkpoint(e.id, 0)).params.parameter_count();
    row.auc = stats::aggregate_runs(auc);
    row.acc = stats::aggregate_runs(acc);
    report.rows.push_back(std::move(row));
  }
  if (config.roster.size() >= 2) report.significance = stats::significance_matrix(runs, alpha);
  return report;
}

namespace {

std::string params_k(std::size_t params) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(params) / 1000.0);
  return buf;
}

std::string p_text(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", p);
  return buf;
}

}  // namespace

std::vector<std::string> verdict_lines(const stats::SignificanceMatrix& m) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < m.encoders.size(); ++i) {
    for (std::size_t j = 0; j < m.encoders.size(); ++j) {
      if (m.verdicts[i][j] == stats::Verdict::row_wins) {
        lines.push_back(m.encoders[i] + " outperforms " + m.encoders[j] + " (p=" + p_text(m.p_values[i][j]) + ")");
      }
    }
  }
  return lines;
}

std::string format_significance_csv(const stats::SignificanceMatrix& m) {
  std::ostringstream o;
  o << "encoder";
  for (const auto& e : m.encoders) o << ',' << e;
  o << '\n';
  for (std::size_t i = 0; i < m.encoders.size(); ++i) {
    o << m.encoders[i];
    for (std::size_t j = 0; j < m.encoders.size(); ++j) o << ',' << format_double(m.p_values[i][j]);
    o << '\n';
  }
  return o.str();
}

std::string render_markdown(const Report& report) {
  std::ostringstream o;
  o << "# Benchmark report\n\n"
    << "- config hash: `" << report.config_hash << "`\n"
    << "- seeds:";
  for (std::size_t i = 0; i < report.seeds.size(); ++i) o << (i ? ", " : " ") << report.seeds[i];
  o << "\n- AUC (one-vs-rest macro) and ACC on each seed's test split, scaled 0 to 100, mean ± sample std\n\n"
    << "| Encoder Type | Encoder | # Params (K) | AUC | ACC |\n"
    << "| --- | --- | ---: | ---: | ---: |\n";
  for (const auto& r : report.rows) {
    o << "| " << r.family << " | " << r.encoder << " | " << params_k(r.params) << " | "
      << stats::format_summary(r.auc) << " | " << stats::format_summary(r.acc) << " |\n";
  }
  if (report.significance) {
    const auto& m = *report.significance;
    o << "\n## Paired t-test p-values (alpha = " << p_text(m.threshold) << ")\n\n|  |";
    for (const auto& e : m.encoders) o << ' ' << e << " |";
    o << "\n| --- |";
    for (std::size_t j = 0; j < m.encoders.size(); ++j) o << " ---: |";
    o << '\n';
    for (std::size_t i = 0; i < m.encoders.size(); ++i) {
      o << "| " << m.encoders[i] << " |";
      for (std::size_t j = 0; j < m.encoders.size(); ++j) o << ' ' << p_text(m.p_values[i][j]) << " |";
      o << '\n';
    }
    const auto lines = verdict_lines(m);
    o << '\n';
    if (lines.empty()) o << "No pair differs significantly.\n";
    for (const auto& l : lines) o << "- " << l << '\n';
  }
  return o.str();
}

std::string render_csv(const Report& report) {
  std::ostringstream o;
  o << "Encoder Type,Encoder,# Params (K),AUC,ACC\n";
  for (const auto& r : report.rows) {
    o << r.family << ',' << r.encoder << ',' << params_k(r.params) << ',' << stats::format_summary(r.auc) << ','
      << stats::format_summary(r.acc) << '\n';
  }
  return o.str();
}

}  // namespace ssmvis::bench
