#include "punr/news.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include "punr/error.hpp"

namespace punr {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::vector<std::string> split_spaces(const std::string& field) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < field.size()) {
    while (i < field.size() && field[i] == ' ') ++i;
    const std::size_t j = field.find(' ', i);
    const std::size_t end = j == std::string::npos ? field.size() : j;
    if (end > i) out.push_back(field.substr(i, end - i));
    i = end;
  }
  return out;
}

bool next_line(std::istream& in, std::string& line, std::size_t& line_no) {
  if (!std::getline(in, line)) return false;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

void require_plain(const std::string& field, const char* what) {
  if (field.find_first_of("\t\n\r") != std::string::npos) {
    throw ContractError(std::string(what) + " contains a tab or newline: '" + field + "'");
  }
}

}  // namespace

bool NewsCatalog::add(NewsItem item) {
  if (index_.count(item.news_id)) return false;
  index_.emplace(item.news_id, items_.size());
  items_.push_back(std::move(item));
  return true;
}

const NewsItem* NewsCatalog::find(const std::string& news_id) const {
  auto it = index_.find(news_id);
  return it == index_.end() ? nullptr : &items_[it->second];
}

const NewsItem& NewsCatalog::at(const std::string& news_id) const {
  const NewsItem* item = find(news_id);
  if (!item) throw ContractError("unknown news id '" + news_id + "'");
  return *item;
}

void NewsCatalog::tokenize(const Vocab& vocab, std::size_t max_title_len) {
  for (auto& item : items_) {
    item.title_tokens = vocab.encode(item.title);
    if (item.title_tokens.size() > max_title_len) item.title_tokens.resize(max_title_len);
  }
  tokenized_ = true;
}

std::vector<std::string> NewsCatalog::titles() const {
  std::vector<std::string> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.title);
  return out;
}

std::size_t Impression::positives() const {
  return static_cast<std::size_t>(std::count_if(
      candidates.begin(), candidates.end(), [](const Candidate& c) { return c.label == 1; }));
}

CatalogParse parse_news_catalog(std::istream& in) {
  CatalogParse result;
  std::string line;
  std::size_t line_no = 0;
  while (next_line(in, line, line_no)) {
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 4) {
      throw ParseError(line_no, "news row needs >= 4 tab-separated columns, got " +
                                    std::to_string(cols.size()));
    }
    if (cols[0].empty()) throw ParseError(line_no, "empty news id");
    if (!result.catalog.add(NewsItem{cols[0], cols[3], {}})) ++result.duplicate_warnings;
  }
  return result;
}

std::vector<Impression> parse_behaviors(std::istream& in) {
  std::vector<Impression> out;
  std::string line;
  std::size_t line_no = 0;
  while (next_line(in, line, line_no)) {
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 5) {
      throw ParseError(line_no, "behavior row needs 5 tab-separated columns, got " +
                                    std::to_string(cols.size()));
    }
    Impression imp;
    imp.impression_id = cols[0];
    imp.user_id = cols[1];
    imp.time = cols[2];
    imp.history = split_spaces(cols[3]);
    for (const auto& tok : split_spaces(cols[4])) {
      const auto dash = tok.rfind('-');
      const std::string suffix = dash == std::string::npos ? "" : tok.substr(dash + 1);
      if (dash == std::string::npos || dash == 0 || (suffix != "0" && suffix != "1")) {
        throw ParseError(line_no, "candidate '" + tok + "' lacks a -0/-1 label suffix");
      }
      imp.candidates.push_back(Candidate{tok.substr(0, dash), suffix == "1" ? 1 : 0});
    }
    if (imp.candidates.empty()) throw ParseError(line_no, "impression has no candidates");
    out.push_back(std::move(imp));
  }
  return out;
}

void write_news_tsv(std::ostream& out, const NewsCatalog& catalog) {
  for (const auto& item : catalog.items()) {
    require_plain(item.news_id, "news id");
    require_plain(item.title, "title");
    out << item.news_id << "\tnews\tnews\t" << item.title << "\t\t\t\t\n";
  }
}

void write_behaviors_tsv(std::ostream& out, std::span<const Impression> impressions) {
  for (const auto& imp : impressions) {
    require_plain(imp.impression_id, "impression id");
    require_plain(imp.user_id, "user id");
    require_plain(imp.time, "time");
    out << imp.impression_id << '\t' << imp.user_id << '\t' << imp.time << '\t';
    for (std::size_t i = 0; i < imp.history.size(); ++i) out << (i ? " " : "") << imp.history[i];
    out << '\t';
    for (std::size_t i = 0; i < imp.candidates.size(); ++i) {
      out << (i ? " " : "") << imp.candidates[i].news_id << '-' << imp.candidates[i].label;
    }
    out << '\n';
  }
}

void validate_impressions(std::span<const Impression> impressions, const NewsCatalog& catalog) {
  for (const auto& imp : impressions) {
    for (const auto& id : imp.history) catalog.at(id);
    for (const auto& c : imp.candidates) catalog.at(c.news_id);
  }
}

Vocab build_vocab(const NewsCatalog& catalog, std::size_t min_freq) {
  const auto titles = catalog.titles();
  return Vocab::build(titles, min_freq);
}

std::size_t TokenizedSequence::real_length() const {
  return static_cast<std::size_t>(
      std::count(attention_keep.begin(), attention_keep.end(), true));
}

namespace {

void pad_to(TokenizedSequence& seq, std::size_t len) {
  while (seq.tokens.size() < len) {
    seq.position_ids.push_back(static_cast<int>(seq.tokens.size()));
    seq.tokens.push_back(kPad);
    seq.segment_ids.push_back(0);
    seq.attention_keep.push_back(false);
  }
}

void push_token(TokenizedSequence& seq, int token, int segment) {
  seq.position_ids.push_back(static_cast<int>(seq.tokens.size()));
  seq.tokens.push_back(token);
  seq.segment_ids.push_back(segment);
  seq.attention_keep.push_back(true);
}

}  // namespace

TokenizedSequence build_user_sequence(std::span<const std::string> history,
                                      const NewsCatalog& catalog, const Vocab& vocab,
                                      const SequenceLimits& limits) {
  if (limits.max_seq_len < 1 + limits.max_title_len) {
    throw ConfigError("max_seq_len must be >= 1 + max_title_len");
  }
  const std::size_t first =
      history.size() > limits.max_behaviors ? history.size() - limits.max_behaviors : 0;

  TokenizedSequence seq;
  push_token(seq, kCls, 0);
  int segment = 0;
  for (std::size_t h = first; h < history.size(); ++h) {
    const NewsItem& item = catalog.at(history[h]);
    ++segment;
    std::vector<int> encoded;
    std::span<const int> title = item.title_tokens;
    if (!catalog.tokenized()) {
      encoded = vocab.encode(item.title);
      title = encoded;
    }
    const std::size_t take = std::min(title.size(), limits.max_title_len);
    for (std::size_t t = 0; t < take && seq.tokens.size() < limits.max_seq_len; ++t) {
      push_token(seq, title[t], segment);
    }
  }
  pad_to(seq, limits.max_seq_len);
  return seq;
}

TokenizedSequence build_news_sequence(const NewsItem& item, const Vocab& vocab,
                                      const SequenceLimits& limits) {
  std::vector<int> encoded;
  std::span<const int> title = item.title_tokens;
  if (title.empty()) {
    encoded = vocab.encode(item.title);
    title = encoded;
  }
  TokenizedSequence seq;
  push_token(seq, kCls, 0);
  const std::size_t take = std::min(title.size(), limits.max_title_len);
  for (std::size_t t = 0; t < take; ++t) push_token(seq, title[t], 1);
  pad_to(seq, 1 + limits.max_title_len);
  return seq;
}

TokenizedSequence build_text_sequence(std::span<const int> tokens, std::size_t max_seq_len) {
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
  TokenizedSequence seq;
  push_token(seq, kCls, 0);
  for (std::size_t t = 0; t < tokens.size() && seq.tokens.size() < max_seq_len; ++t) {
    push_token(seq, tokens[t], 1);
  }
  pad_to(seq, max_seq_len);
  return seq;
}

}  // namespace punr
