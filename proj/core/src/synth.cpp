#include "punr/synth.hpp"

#include <algorithm>
#include <unordered_set>

#include "punr/error.hpp"
#include "punr/rng.hpp"

namespace punr {

void SynthConfig::validate() const {
  if (n_topics < 1 || n_news < 1 || n_users < 1 || vocab_size < 1 || titles_per_user < 1 ||
      candidates_per_impression < 1) {
    throw ConfigError("synth: all counts must be >= 1");
  }
  if (!(topic_purity > 0.0 && topic_purity <= 1.0)) {
    throw ConfigError("synth: topic_purity must lie in (0, 1]");
  }
  if (vocab_size < n_topics) throw ConfigError("synth: vocab_size must be >= n_topics");
  if (n_news < n_topics) throw ConfigError("synth: n_news must be >= n_topics");
  if (candidates_per_impression > 1 && n_topics < 2) {
    throw ConfigError("synth: negatives need at least two topics");
  }
  if (title_len_min < 1 || title_len_min > title_len_max) {
    throw ConfigError("synth: need 1 <= title_len_min <= title_len_max");
  }
  if (!(topic_word_share > 0.0 && topic_word_share <= 1.0)) {
    throw ConfigError("synth: topic_word_share must lie in (0, 1]");
  }
}

namespace {

struct Generator {
  const SynthConfig& cfg;
  Rng rng;
  std::vector<std::vector<std::string>> news_by_topic;

  std::size_t other_topic(std::size_t topic) {
    std::size_t t = rng.below(cfg.n_topics - 1);
    return t >= topic ? t + 1 : t;
  }

  const std::string& random_news(std::size_t topic) {
    const auto& pool = news_by_topic[topic];
    return pool[rng.below(pool.size())];
  }

  Impression make_impression(std::string impression_id, std::string user_id, std::size_t topic,
                             std::vector<std::size_t>& click_topics) {
    Impression imp;
    imp.impression_id = std::move(impression_id);
    imp.user_id = std::move(user_id);
    imp.time = "-";
    for (std::size_t h = 0; h < cfg.titles_per_user; ++h) {
      const bool on_topic = cfg.n_topics == 1 || rng.bernoulli(cfg.topic_purity);
      const std::size_t t = on_topic ? topic : other_topic(topic);
      click_topics.push_back(t);
      imp.history.push_back(random_news(t));
    }

    const std::size_t n = cfg.candidates_per_impression;
    std::size_t n_pos = std::max<std::size_t>(1, (n + 2) / 5);
    if (n > 1) n_pos = std::min(n_pos, n - 1);

    std::unordered_set<std::string> used(imp.history.begin(), imp.history.end());
    auto draw = [&](bool positive) {
      // Prefer unseen items; fall back to repeats when the topic pool is small.
      std::string id;
      for (int attempt = 0; attempt < 16; ++attempt) {
        id = random_news(positive ? topic : other_topic(topic));
        if (!used.count(id)) break;
      }
      used.insert(id);
      return id;
    };
    for (std::size_t i = 0; i < n_pos; ++i) imp.candidates.push_back({draw(true), 1});
    for (std::size_t i = n_pos; i < n; ++i) imp.candidates.push_back({draw(false), 0});
    std::shuffle(imp.candidates.begin(), imp.candidates.end(), rng.engine());
    return imp;
  }
};

}  // namespace

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Generator gen{cfg, Rng(cfg.seed), {}};
  gen.news_by_topic.resize(cfg.n_topics);

  std::size_t shared = cfg.vocab_size / 5;
  if ((cfg.vocab_size - shared) / cfg.n_topics < 1 || cfg.topic_word_share >= 1.0) shared = 0;
  const std::size_t per_topic = (cfg.vocab_size - shared) / cfg.n_topics;
  auto word = [](std::size_t i) { return "w" + std::to_string(i); };

  SynthCorpus corpus;
  for (std::size_t i = 0; i < cfg.n_news; ++i) {
    const std::size_t topic = i % cfg.n_topics;
    const std::size_t len =
        cfg.title_len_min + gen.rng.below(cfg.title_len_max - cfg.title_len_min + 1);
    std::string title;
    for (std::size_t k = 0; k < len; ++k) {
      std::size_t w;
      if (shared == 0 || gen.rng.bernoulli(cfg.topic_word_share)) {
        w = shared + topic * per_topic + gen.rng.below(per_topic);
      } else {
        w = gen.rng.below(shared);
      }
      if (k) title += ' ';
      title += word(w);
    }
    std::string id = "N" + std::to_string(i + 1);
    corpus.news_topic.emplace(id, topic);
    gen.news_by_topic[topic].push_back(id);
    corpus.catalog.add(NewsItem{std::move(id), std::move(title), {}});
  }

  auto make_users = [&](std::size_t count, std::size_t first_user, std::size_t first_imp,
                        std::vector<Impression>& out) {
    for (std::size_t u = 0; u < count; ++u) {
      const std::size_t topic = gen.rng.below(cfg.n_topics);
      std::string user_id = "U" + std::to_string(first_user + u);
      std::vector<std::size_t> clicks;
      out.push_back(
          gen.make_impression(std::to_string(first_imp + u), user_id, topic, clicks));
      corpus.user_topic.emplace(user_id, topic);
      corpus.history_topics.emplace(std::move(user_id), std::move(clicks));
    }
  };
  make_users(cfg.n_users, 1, 1, corpus.train);
  make_users(cfg.eval_users(), cfg.n_users + 1, cfg.n_users + 1, corpus.eval);
  return corpus;
}

std::vector<std::string> synth_general_corpus(const NewsCatalog& catalog, std::size_t n_lines,
                                              std::size_t titles_per_line, std::uint64_t seed) {
  if (catalog.empty()) throw ConfigError("general corpus needs a non-empty catalog");
  Rng rng(seed);
  std::vector<std::string> lines;
  lines.reserve(n_lines);
  for (std::size_t i = 0; i < n_lines; ++i) {
    std::string line;
    for (std::size_t k = 0; k < titles_per_line; ++k) {
      if (k) line += ' ';
      line += catalog.items()[rng.below(catalog.size())].title;
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace punr
