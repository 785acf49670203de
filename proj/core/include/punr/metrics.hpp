#pragma once

// Per-impression ranking metrics, MIND conventions: ranks follow descending
// score with ties broken by original candidate order; AUC counts a tied
// positive/negative pair as half a win.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace punr {

// nullopt when the impression lacks a positive or a negative.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);
// Mean of 1/rank over all positives (or only the best-ranked one). nullopt without positives.
std::optional<double> mrr(std::span<const double> scores, std::span<const int> labels,
                          bool first_positive_only = false);
std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const int> labels,
                                std::size_t k);

struct ImpressionScores {
  std::string impression_id;
  std::vector<double> scores;
  std::vector<int> labels;
};

struct ImpressionMetrics {
  std::string impression_id;
  double auc = 0, mrr = 0, ndcg5 = 0, ndcg10 = 0;
};

struct MetricsReport {
  double auc = 0, mrr = 0, ndcg5 = 0, ndcg10 = 0;
  std::size_t n_impressions = 0;  // impressions that entered the means
  std::size_t n_excluded = 0;     // impressions without both a positive and a negative
};

struct MetricsOptions {
  bool first_positive_mrr = false;
};

// Impressions need >= 1 positive and >= 1 negative to be scored; the rest are
// counted in n_excluded. Means are taken in input order.
MetricsReport aggregate_metrics(std::span<const ImpressionScores> impressions,
                                const MetricsOptions& opts = {},
                                std::vector<ImpressionMetrics>* per_impression = nullptr);

// {"auc":..,"mrr":..,"ndcg5":..,"ndcg10":..,"n_impressions":..,"n_excluded":..}
std::string metrics_json(const MetricsReport& report);
MetricsReport parse_metrics_json(const std::string& text);
void write_per_impression_csv(std::ostream& out, std::span<const ImpressionMetrics> rows);

}  // namespace punr
