#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace punr {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kMask = 3;
inline constexpr int kNumSpecials = 4;

// Lowercases ASCII and splits on whitespace and ASCII punctuation.
// Bytes >= 0x80 are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  Vocab();

  // Tokens with frequency >= min_freq, ordered by (frequency desc, token asc).
  static Vocab build(std::span<const std::string> texts, std::size_t min_freq);

  std::size_t size() const { return tokens_.size(); }
  int index_of(std::string_view token) const;  // kUnk when absent
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  bool contains(std::string_view token) const;

  std::vector<int> encode(std::string_view text) const;

  // One "token<TAB>index" line per entry, specials first.
  void write(std::ostream& out) const;
  static Vocab read(std::istream& in);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void append(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

const char* special_token_text(int index);

}  // namespace punr
