#pragma once

// Classification metrics, multi-run aggregation and paired significance
// testing across encoders.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssmvis::stats {

/// Test-set predictions of one trained encoder on one fold.
struct RunResult {
  std::string encoder_id;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::vector<int> labels;
  std::vector<int> predicted;
  std::vector<std::vector<double>> scores;  // softmax rows [n_samples][n_classes]

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return scores.empty() ? 0 : scores.front().size(); }

  /// Throws DataError unless lengths agree, every score row sums to
  /// 1 +- 1e-9 and predicted[i] is the (lowest-index) argmax of scores[i].
  void validate() const;

  /// Per-sample 0/1 correctness.
  std::vector<int> correctness() const;
};

/// Index of the largest entry; the lowest index wins ties.
int argmax(std::span<const double> row);

double accuracy(const RunResult& result);

/// Rank-based AUC of `scores` with the given positives; tied pairs count 1/2.
/// Requires at least one positive and one negative.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

/// Unweighted mean of one-vs-rest AUCs over classes that have both
/// positives and negatives. Throws DataError if no class qualifies.
double ovr_auc(const RunResult& result);

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> std;  // sample (n - 1) std; absent for a single run
  std::size_t n_runs = 0;
};

MetricSummary aggregate_runs(std::span<const double> values);

/// "95.71 ± 1.01"; just the mean when std is absent.
std::string format_summary(const MetricSummary& summary, int decimals = 2);

/// Two-sided paired t-test on 0/1 correctness vectors (df = n - 1).
/// Zero variance of the differences gives p = 1 when their mean is zero
/// and p = 0 otherwise.
double paired_ttest(std::span<const int> a_correct, std::span<const int> b_correct);

enum class Verdict { none, row_wins, column_wins };

struct SignificanceMatrix {
  std::vector<std::string> encoders;
  std::vector<double> mean_accuracy;         // pooled over all folds
  std::vector<std::vector<double>> p_values;  // symmetric, diagonal 1
  std::vector<std::vector<Verdict>> verdicts;
  double threshold = 0.05;
};

/// Pairs every encoder against every other by concatenating per-sample
/// correctness across folds in fold order. Encoders appear in order of
/// first occurrence. Throws DataError when encoders do not cover the same
/// folds with the same test labels.
SignificanceMatrix significance_matrix(std::span<const RunResult> results, double threshold = 0.05);

}  // namespace ssmvis::stats
