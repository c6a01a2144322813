// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "../support/gradient_suite.hpp"
#include "ssmvis/bench.hpp"
#include "ssmvis/ssm.hpp"
#include "ssmvis/stats.hpp"

using namespace ssmvis;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- 1: kernel / recurrence duality ------------------------------------------

Outcome kernel_duality() {
  const auto start = Clock::now();
  Rng rng{101};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d_inner = 1 + rng.below(3);
    const std::size_t d_state = 1 + rng.below(8);
    const std::size_t L = 1 + rng.below(128);
    ssm::TimeInvariantSSM m{d_inner, d_state, {}, {}, {}, {}};
    for (std::size_t i = 0; i < d_inner * d_state; ++i) {
      m.A_bar.push_back(rng.uniform(-0.95, 0.95));
      m.B_bar.push_back(rng.normal());
      m.C.push_back(rng.normal());
    }
    for (std::size_t c = 0; c < d_inner; ++c) m.D.push_back(rng.normal());
    const auto x = testing::random_tensor({L, d_inner}, rng);
    const auto rec = ssm::ssm_recurrence(m, x);
    const auto conv = ssm::conv_apply_channels(ssm::s4_kernel(m, L), x, m.D);
    worst = std::max(worst, testing::max_abs_diff(rec.data(), conv.data()));
  }
  const double t = seconds_since(start);
  return {worst <= 1e-10 && t < 5.0, "max |diff| " + fmt("%.3g", worst) + " over 100 models, " + fmt("%.2f s", t)};
}

// ---- 2: sequential vs parallel selective scan ---------------------------------

Outcome scan_equivalence() {
  const auto start = Clock::now();
  Rng rng{202};
  const std::size_t fixed[] = {1, 2, 3, 33, 100};
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = trial < 5 ? fixed[trial] : 1 + rng.below(128);
    const std::size_t d_inner = 1 + rng.below(4);
    const std::size_t d_state = 1 + rng.below(8);
    auto params = ssm::SSMParams::initial(d_inner, d_state, false);
    for (auto& a : params.A.mutable_data()) a *= rng.uniform(0.5, 1.5);
    for (auto& d : params.D.mutable_data()) d = rng.normal();
    auto proj = ssm::SelectiveProjections::initial(d_inner, d_state, rng, false);
    for (auto& w : proj.W_delta.mutable_data()) w = rng.normal(0.0, 0.5);
    const auto x = testing::random_tensor({L, d_inner}, rng);
    NoGradGuard no_grad;
    const auto seq = ssm::selective_scan(params, proj, x);
    const auto par = ssm::parallel_selective_scan(params, proj, x);
    worst = std::max(worst, testing::max_abs_diff(seq.data(), par.data()));
  }
  const double t = seconds_since(start);
  return {worst <= 1e-10 && t < 5.0, "max |diff| " + fmt("%.3g", worst) + " over 50 instances, " + fmt("%.2f s", t)};
}

// ---- 3: gradient suite -------------------------------------------------------

Outcome gradient_suite() {
  const auto start = Clock::now();
  const auto cases = testing::gradient_suite();
  std::string failures;
  double worst_primitive = 0.0, worst_block = 0.0;
  for (const auto& c : cases) {
    const auto r = testing::check_gradients(c.loss, c.params);
    double& worst = c.tolerance < 1e-3 ? worst_primitive : worst_block;
    worst = std::max(worst, r.max_rel_err);
    if (!(r.max_rel_err <= c.tolerance)) failures += " " + c.name + " (" + r.worst + ")";
  }
  const double t = seconds_since(start);
  std::string detail = std::to_string(cases.size()) + " cases, worst rel-err primitive " +
                       fmt("%.2g", worst_primitive) + ", block " + fmt("%.2g", worst_block) + ", " +
                       fmt("%.2f s", t);
  if (!failures.empty()) detail += "; failing:" + failures;
  return {failures.empty() && t < 60.0, detail};
}

// ---- 4: transfer cost model ---------------------------------------------------

Outcome transfer_cost() {
  std::size_t mismatches = 0, checked = 0;
  std::vector<std::uint64_t> failing_n;
  for (std::uint64_t n = 1; n <= 64; ++n) {
    bool n_fails = false;
    for (std::uint64_t L = 1; L <= 1024; ++L) {
      for (const std::uint64_t d_inner : {1ULL, 3ULL}) {
        const auto naive = ssm::transfer_cost(ssm::TransferMode::naive, L, n, d_inner);
        const auto fused = ssm::transfer_cost(ssm::TransferMode::fused, L, n, d_inner);
        const std::uint64_t naive_closed = d_inner * L * (4 * n + 2);
        const std::uint64_t fused_closed = d_inner * (n + L * (3 * n + 3));
        mismatches += naive.words_moved != naive_closed || fused.words_moved != fused_closed;
        if (L >= 4) {
          ++checked;
          n_fails |= !(fused.words_moved < naive.words_moved);
        }
      }
    }
    if (n_fails) failing_n.push_back(n);
  }
  std::string detail = std::to_string(checked) + " (L >= 4, n, d_inner) points, " + std::to_string(mismatches) +
                       " closed-form mismatches";
  if (!failing_n.empty()) {
    detail += "; fused >= naive for n =";
    for (const auto n : failing_n) detail += " " + std::to_string(n);
    detail += " (fused - naive = n - L(n - 1) per channel, +1 when n = 1)";
  }
  return {mismatches == 0 && failing_n.empty(), detail};
}

// ---- 5: statistics oracles ----------------------------------------------------

double pairwise_ovr(const stats::RunResult& r) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < r.num_classes(); ++c) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r.labels[i] != static_cast<int>(c)) continue;
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (r.labels[j] == static_cast<int>(c)) continue;
        pairs += 1.0;
        const double si = r.scores[i][c], sj = r.scores[j][c];
        wins += si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
      }
    }
    if (pairs == 0.0) continue;
    total += wins / pairs;
    ++used;
  }
  return total / static_cast<double>(used);
}

Outcome statistics_oracles() {
  Rng rng{505};
  std::size_t exact = 0, instances = 0;
  while (instances < 200) {
    stats::RunResult r;
    const std::size_t n = 2 + rng.below(150), classes = 2 + rng.below(3);
    const auto levels = 1 + rng.below(10);
    std::vector<std::size_t> seen(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
      r.labels.push_back(static_cast<int>(rng.below(classes)));
      ++seen[static_cast<std::size_t>(r.labels.back())];
      std::vector<double> row(classes);
      for (auto& v : row) v = static_cast<double>(rng.below(levels));
      r.scores.push_back(row);
      r.predicted.push_back(stats::argmax(row));
    }
    if (std::count(seen.begin(), seen.end(), n) == 1) continue;  // one class only
    ++instances;
    exact += stats::ovr_auc(r) == pairwise_ovr(r);
  }
  const std::vector<int> a{1, 1, 0, 1}, b{0, 1, 0, 0};
  const double p = stats::paired_ttest(a, b);
  const double same = stats::paired_ttest(a, a);
  const bool ok = exact == 200 && std::abs(p - 0.1817) <= 1e-3 && same == 1.0;
  return {ok, std::to_string(exact) + "/200 AUC exact, p(documented case) = " + fmt("%.6f", p) +
                  ", p(identical) = " + fmt("%g", same)};
}

// ---- 6-8: synthetic benchmark ---------------------------------------------------

struct BenchRun {
  int exit_code = -1;
  double seconds = 0.0;
  std::string log;
};

BenchRun run_benchmark(const fs::path& config, const fs::path& out) {
  fs::remove_all(out);
  std::ostringstream log, err;
  const auto start = Clock::now();
  BenchRun r;
  r.exit_code = bench::cmd_benchmark({config, out, std::nullopt}, log, err);
  r.seconds = seconds_since(start);
  r.log = err.str();
  return r;
}

Outcome learnability(const bench::BenchmarkConfig& config, const fs::path& out, const BenchRun& run) {
  if (run.exit_code != 0) return {false, "benchmark exited " + std::to_string(run.exit_code) + ": " + run.log};
  const auto runs = bench::load_runs(config, bench::ResultPaths{out});
  bool all = true;
  std::string detail;
  for (const auto& e : config.roster) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
      if (r.encoder_id != e.id) continue;
      total += stats::accuracy(r);
      ++n;
    }
    const double mean = total / static_cast<double>(n);
    all &= mean >= 0.85;
    detail += e.id + " " + fmt("%.3f", mean) + ", ";
  }
  detail += "mean test accuracy over " + std::to_string(config.n_seeds) + " seeds; " + fmt("%.1f s", run.seconds);
  return {all && run.seconds < 900.0, detail};
}

Outcome protocol_fidelity(const bench::BenchmarkConfig& config, const fs::path& out, const BenchRun& run,
                          const fs::path& scratch) {
  if (run.exit_code != 0) return {false, "benchmark did not complete"};
  std::vector<std::string> problems;

  const std::string report = slurp(bench::ResultPaths{out}.report("md"));
  if (report.find("| Encoder Type | Encoder | # Params (K) | AUC | ACC |") == std::string::npos) {
    problems.push_back("report header");
  }
  const std::regex cell(R"((\d+\.\d\d) ± (\d+\.\d\d))");
  for (const auto& e : config.roster) {
    const std::regex row_re("\\| [A-Za-z]+ \\| " + std::regex_replace(e.id, std::regex(R"([-.])"), "\\$&") +
                            R"( \| [0-9.]+ \| ([^|]+) \| ([^|]+) \|)");
    std::smatch m;
    if (!std::regex_search(report, m, row_re)) {
      problems.push_back("row " + e.id);
      continue;
    }
    for (int k = 1; k <= 2; ++k) {
      std::smatch c;
      const std::string text = m[k].str();
      if (!std::regex_search(text, c, cell) || std::stod(c[1]) < 0.0 || std::stod(c[1]) > 100.0) {
        problems.push_back("cell " + e.id + " '" + text + "'");
      }
    }
  }

  std::ostringstream cmp_out, cmp_err;
  if (bench::cmd_compare(out, 0.05, cmp_out, cmp_err) != 0) problems.push_back("compare: " + cmp_err.str());
  const auto matrix = stats::significance_matrix(bench::load_runs(config, bench::ResultPaths{out}));
  for (std::size_t i = 0; i < matrix.encoders.size(); ++i) {
    if (matrix.p_values[i][i] != 1.0) problems.push_back("diagonal");
    for (std::size_t j = 0; j < matrix.encoders.size(); ++j) {
      if (matrix.p_values[i][j] != matrix.p_values[j][i]) problems.push_back("asymmetric");
    }
  }

  // Constructed pair through the CLI path: always right vs always wrong.
  const fs::path pair_dir = scratch / "constructed_pair";
  fs::remove_all(pair_dir);
  fs::create_directories(pair_dir);
  const std::string pair_config = "dataset: {classes: 2}\nbenchmark: {n_seeds: 1}\n"
                                  "encoders:\n  - {id: right, kind: toy_cnn}\n  - {id: wrong, kind: toy_cnn}\n";
  std::ofstream(pair_dir / "config.yaml") << pair_config;
  const auto hash = bench::config_hash(bench::parse_config(pair_config));
  const bench::ResultPaths pp{pair_dir};
  for (const bool right : {true, false}) {
    stats::RunResult r;
    r.encoder_id = right ? "right" : "wrong";
    for (int i = 0; i < 20; ++i) {
      const int label = i % 2, pred = right ? label : 1 - label;
      r.labels.push_back(label);
      r.predicted.push_back(pred);
      r.scores.push_back(pred == 0 ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.2, 0.8});
    }
    fs::create_directories(pp.run(r.encoder_id, 0).parent_path());
    std::ofstream(pp.run(r.encoder_id, 0)) << bench::format_run_result(r, hash);
  }
  std::ostringstream pair_out, pair_err;
  const int pair_code = bench::cmd_compare(pair_dir, 0.05, pair_out, pair_err);
  std::smatch pm;
  const std::string pair_text = pair_out.str();
  const std::regex verdict(R"(right outperforms wrong \(p=([0-9.eE+-]+)\))");
  if (pair_code != 0 || !std::regex_search(pair_text, pm, verdict) || !(std::stod(pm[1]) < 0.05)) {
    problems.push_back("constructed pair verdict");
  }

  std::string detail = std::to_string(config.roster.size()) + " report rows, " +
                       std::to_string(matrix.encoders.size()) + "x" + std::to_string(matrix.encoders.size()) +
                       " symmetric matrix with unit diagonal, constructed pair " +
                       (pm.size() > 1 ? "p=" + pm[1].str() : std::string("missing"));
  for (const auto& p : problems) detail += "; problem: " + p;
  return {problems.empty(), detail};
}

Outcome determinism(const bench::BenchmarkConfig& config, const fs::path& first, const BenchRun& run1,
                    const fs::path& second, const BenchRun& run2) {
  if (run1.exit_code != 0 || run2.exit_code != 0) return {false, "a benchmark run failed"};
  std::size_t files = 0, differing = 0;
  const bench::ResultPaths a{first}, b{second};
  for (std::size_t fold = 0; fold < config.n_seeds; ++fold) {
    for (const auto& e : config.roster) {
      ++files;
      differing += slurp(a.run(e.id, fold)) != slurp(b.run(e.id, fold));
    }
  }
  const bool report_same = slurp(a.report("md")) == slurp(b.report("md"));
  return {differing == 0 && report_same, std::to_string(files - differing) + "/" + std::to_string(files) +
                                             " run files identical, report " +
                                             (report_same ? "identical" : "differs") + ", second run " +
                                             fmt("%.1f s", run2.seconds)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path config = SSMVIS_SYNTHETIC_CONFIG;
  fs::path work = fs::temp_directory_path() / "ssmvis_acceptance";
  bool skip_benchmark = false;
  app.add_option("--config", config, "Synthetic benchmark config")->check(CLI::ExistingFile);
  app.add_option("--work", work, "Scratch directory for benchmark outputs");
  app.add_flag("--skip-benchmark", skip_benchmark, "Only run criteria 1-5");
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](int id, const char* title, const Outcome& o) {
    std::printf("%s criterion %d: %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, "kernel/recurrence duality", kernel_duality());
  report(2, "sequential/parallel scan equivalence", scan_equivalence());
  report(3, "gradient suite", gradient_suite());
  report(4, "transfer cost model", transfer_cost());
  report(5, "statistics oracles", statistics_oracles());

  if (!skip_benchmark) {
    const auto cfg = bench::load_config(config);
    fs::create_directories(work);
    const auto first = work / "run_a", second = work / "run_b";
    const auto run1 = run_benchmark(config, first);
    report(6, "end-to-end learnability", learnability(cfg, first, run1));
    report(7, "protocol fidelity", protocol_fidelity(cfg, first, run1, work));
    const auto run2 = run_benchmark(config, second);
    report(8, "determinism", determinism(cfg, first, run1, second, run2));
  }
  return failures == 0 ? 0 : 1;
}
