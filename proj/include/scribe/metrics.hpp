#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scribe/alphabet.hpp"

namespace scribe {

/// Levenshtein distance with unit costs.
template <typename T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance(std::span<const T>(a), std::span<const T>(b));
}

inline std::size_t char_edits(std::string_view ref, std::string_view hyp) {
  return edit_distance(split_utf8(ref), split_utf8(hyp));
}

/// Tokens separated by the space character; empty tokens are dropped.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::size_t word_edits(std::string_view ref, std::string_view hyp) {
  return edit_distance(split_words(ref), split_words(hyp));
}

/// Accumulates edit counts over samples.
struct ErrorTally {
  std::size_t char_edits = 0;
  std::size_t ref_chars = 0;
  std::size_t word_edits = 0;
  std::size_t ref_words = 0;

  void add(std::string_view ref, std::string_view hyp) {
    char_edits += scribe::char_edits(ref, hyp);
    ref_chars += split_utf8(ref).size();
    word_edits += scribe::word_edits(ref, hyp);
    ref_words += split_words(ref).size();
  }
  double cer() const {
    return ref_chars ? 100.0 * static_cast<double>(char_edits) / static_cast<double>(ref_chars) : 0.0;
  }
  double wer() const {
    return ref_words ? 100.0 * static_cast<double>(word_edits) / static_cast<double>(ref_words) : 0.0;
  }
};

}  // namespace scribe
