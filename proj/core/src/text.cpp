#include "punr/text.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>

#include "punr/error.hpp"

namespace punr {

namespace {
constexpr const char* kSpecialText[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};

bool is_separator(unsigned char c) {
  return c < 0x80 && (std::isspace(c) || std::ispunct(c) || std::iscntrl(c));
}
}  // namespace

const char* special_token_text(int index) {
  return (index >= 0 && index < kNumSpecials) ? kSpecialText[index] : nullptr;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_separator(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocab::Vocab() {
  for (const char* s : kSpecialText) append(s);
}

void Vocab::append(std::string token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::string> texts, std::size_t min_freq) {
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& tok : tokenize(text)) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  // counts is already lexicographic, so a stable sort by frequency finishes the order.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [tok, n] : kept) {
    if (!v.contains(tok)) v.append(tok);
  }
  return v;
}

int Vocab::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(index_of(tok));
  return ids;
}

void Vocab::write(std::ostream& out) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Vocab Vocab::read(std::istream& in) {
  Vocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(line_no, "vocab line needs token<TAB>index");
    const std::string tok = line.substr(0, tab);
    std::size_t idx = 0;
    try {
      idx = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError(line_no, "bad vocab index '" + line.substr(tab + 1) + "'");
    }
    if (idx < kNumSpecials) {
      if (tok != kSpecialText[idx]) {
        throw ParseError(line_no, "special index " + std::to_string(idx) + " must be " +
                                      kSpecialText[idx]);
      }
      continue;
    }
    if (idx != v.size()) throw ParseError(line_no, "vocab indices must be contiguous");
    if (v.contains(tok)) throw ParseError(line_no, "duplicate vocab token '" + tok + "'");
    v.append(tok);
  }
  return v;
}

}  // namespace punr
