#include "punr/evaluate.hpp"

#include <algorithm>
#include <thread>
#include <unordered_map>

#include "punr/error.hpp"

namespace punr {

namespace {

// Runs fn(i) for i in [0, n) over up to `threads` workers with contiguous chunks.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
    workers.emplace_back([begin, end, &fn] {
      NoGradGuard no_grad;
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace

std::vector<ImpressionScores> score_impressions(const PunrModel& model,
                                                std::span<const Impression> impressions,
                                                const NewsCatalog& catalog, const Vocab& vocab,
                                                const EvalOptions& opts) {
  const ModelConfig& cfg = model.config();
  // Unknown ids must surface here, not inside a worker thread.
  validate_impressions(impressions, catalog);

  std::unordered_map<std::string, std::size_t> slot;
  std::vector<const NewsItem*> news;
  for (const auto& imp : impressions) {
    for (const auto& c : imp.candidates) {
      if (slot.emplace(c.news_id, news.size()).second) news.push_back(&catalog.at(c.news_id));
    }
  }
  std::vector<std::vector<double>> news_vec(news.size());
  parallel_for(news.size(), opts.threads, [&](std::size_t i) {
    Tensor v = encode_vector(build_news_sequence(*news[i], vocab, opts.limits), model.news_tower(), cfg);
    news_vec[i].assign(v.values().begin(), v.values().end());
  });

  std::vector<ImpressionScores> out(impressions.size());
  parallel_for(impressions.size(), opts.threads, [&](std::size_t i) {
    const Impression& imp = impressions[i];
    Tensor u = encode_vector(build_user_sequence(imp.history, catalog, vocab, opts.limits),
                             model.user_tower(), cfg);
    ImpressionScores& s = out[i];
    s.impression_id = imp.impression_id;
    for (const auto& c : imp.candidates) {
      s.scores.push_back(score(u.values(), news_vec[slot.at(c.news_id)]));
      s.labels.push_back(c.label);
    }
  });
  return out;
}

EvalResult evaluate(const PunrModel& model, std::span<const Impression> impressions,
                    const NewsCatalog& catalog, const Vocab& vocab, const EvalOptions& opts) {
  EvalResult r;
  r.scores = score_impressions(model, impressions, catalog, vocab, opts);
  r.report = aggregate_metrics(r.scores, opts.metrics, &r.per_impression);
  if (r.report.n_impressions == 0) {
    throw ConfigError("evaluate: no impression has both a positive and a negative candidate");
  }
  return r;
}

}  // namespace punr
