#include "ssmvis/stats.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>

#include "ssmvis/error.hpp"

namespace ssmvis::stats {

void RunResult::validate() const {
  const std::string who = "run result '" + encoder_id + "' fold " + std::to_string(fold);
  if (labels.size() != predicted.size() || labels.size() != scores.size()) {
    throw DataError(who + ": labels, predictions and scores differ in length");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != num_classes() || scores[i].empty()) {
      throw DataError(who + ": ragged score matrix at row " + std::to_string(i));
    }
    const double total = std::accumulate(scores[i].begin(), scores[i].end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw DataError(who + ": scores in row " + std::to_string(i) + " do not sum to 1");
    if (predicted[i] != argmax(scores[i])) {
      throw DataError(who + ": prediction in row " + std::to_string(i) + " is not the argmax of its scores");
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes()) {
      throw DataError(who + ": label out of range in row " + std::to_string(i));
    }
  }
}

std::vector<int> RunResult::correctness() const {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == predicted[i] ? 1 : 0;
  return out;
}

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

double accuracy(const RunResult& result) {
  if (result.labels.empty()) throw DataError("accuracy of an empty result");
  if (result.labels.size() != result.predicted.size()) throw DataError("accuracy: length mismatch");
  const auto c = result.correctness();
  return static_cast<double>(std::accumulate(c.begin(), c.end(), 0)) / static_cast<double>(c.size());
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw DataError("binary_auc: length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average 1-based ranks over runs of equal scores.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("binary_auc needs both positives and negatives");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double ovr_auc(const RunResult& result) {
  const std::size_t n = result.size();
  const std::size_t classes = result.num_classes();
  if (n == 0 || result.scores.size() != n) throw DataError("ovr_auc: empty or inconsistent result");
  double total = 0.0;
  std::size_t used = 0;
  std::vector<double> column(n);
  std::unique_ptr<bool[]> positive(new bool[n]);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = result.scores[i].at(c);
      positive[i] = result.labels[i] == static_cast<int>(c);
      n_pos += positive[i] ? 1 : 0;
    }
    if (n_pos == 0 || n_pos == n) continue;
    total += binary_auc(column, std::span<const bool>(positive.get(), n));
    ++used;
  }
  if (used == 0) throw DataError("ovr_auc: no class has both positive and negative samples");
  return total / static_cast<double>(used);
}

MetricSummary aggregate_runs(std::span<const double> values) {
  if (values.empty()) throw DataError("aggregate_runs of an empty list");
  MetricSummary s;
  s.n_runs = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (const double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string format_summary(const MetricSummary& summary, int decimals) {
  char buf[96];
  if (summary.std) {
    std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, summary.mean, decimals, *summary.std);
  } else {
    std::snprintf(buf, sizeof buf, "%.*f", decimals, summary.mean);
  }
  return buf;
}

double paired_ttest(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) {
    throw DataError("paired_ttest: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " samples");
  }
  const std::size_t n = a.size();
  if (n < 2) throw DataError("paired_ttest needs at least 2 pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<double>(a[i] - b[i]);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (const double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = static_cast<double>(n - 1);
  // Two-sided tail of Student's t: I_{df/(df+t^2)}(df/2, 1/2).
  return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

SignificanceMatrix significance_matrix(std::span<const RunResult> results, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("significance threshold must be in (0, 1]");
  SignificanceMatrix m;
  m.threshold = threshold;
  std::map<std::string, std::map<std::size_t, const RunResult*>> by_encoder;
  for (const auto& r : results) {
    if (by_encoder.count(r.encoder_id) == 0) m.encoders.push_back(r.encoder_id);
    auto& folds = by_encoder[r.encoder_id];
    if (!folds.emplace(r.fold, &r).second) {
      throw DataError("encoder '" + r.encoder_id + "' has two results for fold " + std::to_string(r.fold));
    }
  }
  if (m.encoders.empty()) throw DataError("significance_matrix: no results");

  const auto& reference = by_encoder.at(m.encoders.front());
  std::vector<std::vector<int>> correct(m.encoders.size());
  for (std::size_t e = 0; e < m.encoders.size(); ++e) {
    const auto& folds = by_encoder.at(m.encoders[e]);
    if (folds.size() != reference.size()) {
      throw DataError("encoder '" + m.encoders[e] + "' covers " + std::to_string(folds.size()) + " folds, '" +
                      m.encoders.front() + "' covers " + std::to_string(reference.size()));
    }
    for (const auto& [fold, run] : folds) {
      const auto ref = reference.find(fold);
      if (ref == reference.end()) {
        throw DataError("encoder '" + m.encoders[e] + "' has fold " + std::to_string(fold) + " missing elsewhere");
      }
      if (run->labels != ref->second->labels) {
        throw DataError("fold " + std::to_string(fold) + ": encoders '" + m.encoders[e] + "' and '" +
                        m.encoders.front() + "' were tested on different samples");
      }
      const auto c = run->correctness();
      correct[e].insert(correct[e].end(), c.begin(), c.end());
    }
  }

  const std::size_t k = m.encoders.size();
  m.mean_accuracy.resize(k);
  for (std::size_t e = 0; e < k; ++e) {
    const auto hits = std::accumulate(correct[e].begin(), correct[e].end(), 0);
    m.mean_accuracy[e] = correct[e].empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(correct[e].size());
  }
  m.p_values.assign(k, std::vector<double>(k, 1.0));
  m.verdicts.assign(k, std::vector<Verdict>(k, Verdict::none));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double p = paired_ttest(correct[i], correct[j]);
      m.p_values[i][j] = m.p_values[j][i] = p;
      if (p < threshold && m.mean_accuracy[i] != m.mean_accuracy[j]) {
        const bool i_wins = m.mean_accuracy[i] > m.mean_accuracy[j];
        m.verdicts[i][j] = i_wins ? Verdict::row_wins : Verdict::column_wins;
        m.verdicts[j][i] = i_wins ? Verdict::column_wins : Verdict::row_wins;
      }
    }
  }
  return m;
}

}  // namespace ssmvis::stats
