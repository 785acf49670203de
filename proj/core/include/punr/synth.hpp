#pragma once

// Planted-topic corpora for desk-scale experiments.
//
// Every news title is sampled from one topic's word distribution; every user
// has a topic and clicks on-topic news with probability topic_purity.
// Positive candidates share the user's topic and negatives never do, so
// ranking candidates by topic match is a perfect scorer.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "punr/news.hpp"

namespace punr {

struct SynthConfig {
  std::size_t n_topics = 8;
  std::size_t n_news = 2000;
  std::size_t n_users = 1000;
  std::size_t vocab_size = 400;
  std::size_t titles_per_user = 10;
  std::size_t candidates_per_impression = 5;
  double topic_purity = 0.9;
  std::uint64_t seed = 42;

  std::size_t n_eval_users = 0;  // 0 -> ceil(n_users / 2)
  std::size_t title_len_min = 4;
  std::size_t title_len_max = 8;
  // Share of title words drawn from the topic's own words (rest from a shared pool).
  double topic_word_share = 0.8;

  void validate() const;
  std::size_t eval_users() const { return n_eval_users ? n_eval_users : (n_users + 1) / 2; }
};

struct SynthCorpus {
  NewsCatalog catalog;
  std::vector<Impression> train;
  std::vector<Impression> eval;
  std::unordered_map<std::string, std::size_t> news_topic;
  std::unordered_map<std::string, std::size_t> user_topic;
  // user id -> topic that generated each click, parallel to Impression::history.
  std::unordered_map<std::string, std::vector<std::size_t>> history_topics;
};

SynthCorpus synth_corpus(const SynthConfig& cfg);

// Mixed-topic running text for decoder initialization; each line joins
// `titles_per_line` random titles from the catalog.
std::vector<std::string> synth_general_corpus(const NewsCatalog& catalog, std::size_t n_lines,
                                              std::size_t titles_per_line, std::uint64_t seed);

}  // namespace punr
