#pragma once

// MIND-format news/behavior records and the token sequences built from them.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "punr/text.hpp"

namespace punr {

struct NewsItem {
  std::string news_id;
  std::string title;
  std::vector<int> title_tokens;  // filled by NewsCatalog::tokenize

  friend bool operator==(const NewsItem&, const NewsItem&) = default;
};

class NewsCatalog {
 public:
  // False (and no insertion) when the id already exists.
  bool add(NewsItem item);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<NewsItem>& items() const { return items_; }

  const NewsItem* find(const std::string& news_id) const;
  // Throws ContractError naming the id.
  const NewsItem& at(const std::string& news_id) const;

  void tokenize(const Vocab& vocab, std::size_t max_title_len);
  bool tokenized() const { return tokenized_; }

  std::vector<std::string> titles() const;

  friend bool operator==(const NewsCatalog& a, const NewsCatalog& b) {
    return a.items_ == b.items_;
  }

 private:
  std::vector<NewsItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
  bool tokenized_ = false;
};

struct Candidate {
  std::string news_id;
  int label = 0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct Impression {
  std::string impression_id;
  std::string user_id;
  std::string time;
  std::vector<std::string> history;
  std::vector<Candidate> candidates;

  std::size_t positives() const;
  friend bool operator==(const Impression&, const Impression&) = default;
};

struct CatalogParse {
  NewsCatalog catalog;
  std::size_t duplicate_warnings = 0;
};

// news.tsv: id, category, subcategory, title, [abstract, url, entities...].
CatalogParse parse_news_catalog(std::istream& in);
// behaviors.tsv: impression_id, user_id, time, "N1 N2 ...", "N3-1 N4-0 ...".
std::vector<Impression> parse_behaviors(std::istream& in);

void write_news_tsv(std::ostream& out, const NewsCatalog& catalog);
void write_behaviors_tsv(std::ostream& out, std::span<const Impression> impressions);

// Throws ContractError naming the first history/candidate id missing from the catalog.
void validate_impressions(std::span<const Impression> impressions, const NewsCatalog& catalog);

Vocab build_vocab(const NewsCatalog& catalog, std::size_t min_freq);

struct SequenceLimits {
  std::size_t max_behaviors = 50;
  std::size_t max_title_len = 30;
  std::size_t max_seq_len = 512;
};

// CLS-prefixed token row. segment_ids: 0 for CLS and PAD, k for the k-th behavior.
struct TokenizedSequence {
  std::vector<int> tokens;
  std::vector<int> segment_ids;
  std::vector<int> position_ids;
  std::vector<bool> attention_keep;

  std::size_t length() const { return tokens.size(); }
  // Non-PAD positions including CLS.
  std::size_t real_length() const;

  friend bool operator==(const TokenizedSequence&, const TokenizedSequence&) = default;
};

// Most recent max_behaviors clicks, each cut to max_title_len tokens, then the
// whole row cut to max_seq_len and PAD-filled to exactly max_seq_len.
TokenizedSequence build_user_sequence(std::span<const std::string> history,
                                      const NewsCatalog& catalog, const Vocab& vocab,
                                      const SequenceLimits& limits);

// Single candidate title as one segment; padded to 1 + max_title_len.
TokenizedSequence build_news_sequence(const NewsItem& item, const Vocab& vocab,
                                      const SequenceLimits& limits);

// Plain running text as one segment (decoder initialization corpus).
TokenizedSequence build_text_sequence(std::span<const int> tokens, std::size_t max_seq_len);

}  // namespace punr
