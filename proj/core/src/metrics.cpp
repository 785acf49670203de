#include "punr/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "json.hpp"
#include "punr/error.hpp"

namespace punr {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("metrics: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(labels.size()) + " labels");
  }
}

// Candidate indices by descending score, ties in original order.
std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double wins = 0.0;
  std::size_t neg_below = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? pos : neg) += 1;
      ++j;
    }
    wins += static_cast<double>(pos) * static_cast<double>(neg_below) +
            0.5 * static_cast<double>(pos) * static_cast<double>(neg);
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> mrr(std::span<const double> scores, std::span<const int> labels,
                          bool first_positive_only) {
  check_lengths(scores, labels);
  const auto order = ranking(scores);
  double acc = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!labels[order[r]]) continue;
    acc += 1.0 / static_cast<double>(r + 1);
    ++n_pos;
    if (first_positive_only) break;
  }
  if (n_pos == 0) return std::nullopt;
  return acc / static_cast<double>(n_pos);
}

std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const int> labels,
                                std::size_t k) {
  check_lengths(scores, labels);
  const auto order = ranking(scores);
  const std::size_t cutoff = std::min(k, order.size());
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) return std::nullopt;
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t r = 0; r < cutoff; ++r) {
    const double discount = 1.0 / std::log2(static_cast<double>(r) + 2.0);
    if (labels[order[r]]) dcg += discount;
    if (r < n_pos) ideal += discount;
  }
  return dcg / ideal;
}

MetricsReport aggregate_metrics(std::span<const ImpressionScores> impressions,
                                const MetricsOptions& opts,
                                std::vector<ImpressionMetrics>* per_impression) {
  MetricsReport report;
  for (const auto& imp : impressions) {
    const auto a = auc(imp.scores, imp.labels);
    if (!a) {
      ++report.n_excluded;
      continue;
    }
    ImpressionMetrics m{imp.impression_id, *a, *mrr(imp.scores, imp.labels, opts.first_positive_mrr),
                        *ndcg_at_k(imp.scores, imp.labels, 5), *ndcg_at_k(imp.scores, imp.labels, 10)};
    report.auc += m.auc;
    report.mrr += m.mrr;
    report.ndcg5 += m.ndcg5;
    report.ndcg10 += m.ndcg10;
    ++report.n_impressions;
    if (per_impression) per_impression->push_back(std::move(m));
  }
  if (report.n_impressions) {
    const double n = static_cast<double>(report.n_impressions);
    report.auc /= n;
    report.mrr /= n;
    report.ndcg5 /= n;
    report.ndcg10 /= n;
  }
  return report;
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["auc"] = r.auc;
  j["mrr"] = r.mrr;
  j["ndcg5"] = r.ndcg5;
  j["ndcg10"] = r.ndcg10;
  j["n_impressions"] = r.n_impressions;
  j["n_excluded"] = r.n_excluded;
  return j.dump();
}

MetricsReport parse_metrics_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.auc = j.at("auc").get<double>();
    r.mrr = j.at("mrr").get<double>();
    r.ndcg5 = j.at("ndcg5").get<double>();
    r.ndcg10 = j.at("ndcg10").get<double>();
    r.n_impressions = j.at("n_impressions").get<std::size_t>();
    r.n_excluded = j.at("n_excluded").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("metrics json: ") + e.what());
  }
}

void write_per_impression_csv(std::ostream& out, std::span<const ImpressionMetrics> rows) {
  out << "impression_id,auc,mrr,ndcg5,ndcg10\n";
  auto cell = [](double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  for (const auto& m : rows) {
    out << m.impression_id << ',' << cell(m.auc) << ',' << cell(m.mrr) << ',' << cell(m.ndcg5)
        << ',' << cell(m.ndcg10) << '\n';
  }
}

}  // namespace punr
