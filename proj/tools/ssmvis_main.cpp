// ssmvis: train encoders, run multi-seed benchmarks, compare and report.

#include <CLI11.hpp>

#include <iostream>

#include "ssmvis/bench.hpp"

namespace bench = ssmvis::bench;

int main(int argc, char** argv) {
  CLI::App app{"State-space vision encoder benchmark"};
  app.require_subcommand(1);

  bench::TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train one encoder on one seed's split");
  train->add_option("--config", train_opts.config, "Benchmark config (YAML)")->required()->check(CLI::ExistingFile);
  train->add_option("--encoder", train_opts.encoder_id, "Roster id to train")->required();
  train->add_option("--seed", train_opts.seed, "Fold seed: selects the split and the weight init");
  train->add_option("--out", train_opts.out, "Output directory (default <output_dir>/train)");

  bench::BenchmarkOptions bench_opts;
  auto* benchmark = app.add_subcommand("benchmark", "Train every roster encoder on every seed, then report");
  benchmark->add_option("--config", bench_opts.config, "Benchmark config (YAML)")
      ->required()
      ->check(CLI::ExistingFile);
  benchmark->add_option("--out", bench_opts.out, "Results directory (overrides benchmark.output_dir)");
  benchmark->add_option("--workers", bench_opts.workers, "Concurrent runs")->check(CLI::PositiveNumber);

  std::filesystem::path results_dir;
  double alpha = 0.05;
  auto* compare = app.add_subcommand("compare", "Paired t-tests between encoders of a finished benchmark");
  compare->add_option("--out", results_dir, "Results directory")->required();
  compare->add_option("--alpha", alpha, "Significance threshold")->check(CLI::Range(0.0, 1.0));

  std::string format = "markdown";
  auto* report = app.add_subcommand("report", "Render the results table");
  report->add_option("--out", results_dir, "Results directory")->required();
  report->add_option("--format", format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bench::kExitConfig;
  }

  if (*train) return bench::cmd_train(train_opts, std::cout, std::cerr);
  if (*benchmark) return bench::cmd_benchmark(bench_opts, std::cout, std::cerr);
  if (*compare) return bench::cmd_compare(results_dir, alpha, std::cout, std::cerr);
  return bench::cmd_report(results_dir, format == "csv" ? bench::ReportFormat::csv : bench::ReportFormat::markdown,
                           std::cout, std::cerr);
}
