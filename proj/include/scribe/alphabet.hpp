#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scribe/ctc.hpp"
#include "scribe/error.hpp"

namespace scribe {

/// Splits UTF-8 text into code-point substrings. Invalid lead bytes are
/// returned as single-byte symbols.
inline std::vector<std::string> split_utf8(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

/// Ordered symbol set; symbol k maps to CTC label k and the blank is size().
class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(std::string_view symbols) {
    for (auto& s : split_utf8(symbols)) {
      if (index_.count(s)) throw ConfigError("alphabet repeats symbol '" + s + "'");
      index_[s] = static_cast<int>(symbols_.size());
      symbols_.push_back(s);
    }
    if (symbols_.empty()) throw ConfigError("alphabet is empty");
  }

  std::size_t size() const { return symbols_.size(); }
  int blank() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::string str() const {
    std::string s;
    for (const auto& x : symbols_) s += x;
    return s;
  }

  std::optional<int> index_of(const std::string& symbol) const {
    auto it = index_.find(symbol);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const std::string& symbol) const { return index_.count(symbol) != 0; }

  /// Throws IoError naming the first symbol outside the alphabet.
  LabelSeq encode(std::string_view text) const {
    LabelSeq out;
    for (auto& s : split_utf8(text)) {
      auto k = index_of(s);
      if (!k) throw IoError("symbol '" + s + "' is not in the alphabet");
      out.push_back(*k);
    }
    return out;
  }

  std::string decode(const LabelSeq& labels) const {
    std::string out;
    for (int l : labels) {
      if (l >= 0 && static_cast<std::size_t>(l) < symbols_.size()) out += symbols_[l];
    }
    return out;
  }

  bool operator==(const Alphabet& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> index_;
};

}  // namespace scribe
