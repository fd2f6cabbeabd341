#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sslab/corpus.hpp"
#include "sslab/error.hpp"
#include "sslab/metrics.hpp"
#include "sslab/unicode.hpp"

namespace sslab {

/// Unit-cost edit distance (insert, delete, substitute). O(|a||b|) time and
/// O(min(|a|,|b|)) memory: the DP keeps a single row over the shorter input.
template <class CharT>
std::size_t levenshtein_distance(std::basic_string_view<CharT> a, std::basic_string_view<CharT> b) {
  if (a.size() < b.size()) std::swap(a, b);
  // common prefix/suffix never contribute edits
  while (!b.empty() && a.front() == b.front()) {
    a.remove_prefix(1);
    b.remove_prefix(1);
  }
  while (!b.empty() && a.back() == b.back()) {
    a.remove_suffix(1);
    b.remove_suffix(1);
  }
  if (b.empty()) return a.size();

  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    const CharT ca = a[i - 1];
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (ca == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Distance over Unicode scalar values of two UTF-8 strings.
inline std::size_t levenshtein_distance(std::string_view a, std::string_view b) {
  const auto ua = unicode::decode(a);
  const auto ub = unicode::decode(b);
  return levenshtein_distance(std::u32string_view(ua), std::u32string_view(ub));
}

/// Distance plus the longer length, the pieces of the normalized similarity.
struct EditRatio {
  std::size_t distance = 0;
  std::size_t max_length = 0;

  double similarity() const {
    if (max_length == 0) return 1.0;
    return 1.0 - static_cast<double>(distance) / static_cast<double>(max_length);
  }

  /// Bin of the similarity among `n_bins` equal-width bins on [0, 1],
  /// computed in integers so values on a bin edge are never misplaced.
  std::size_t bin(std::size_t n_bins) const {
    if (max_length == 0) return n_bins - 1;
    return std::min(n_bins - 1, n_bins * (max_length - distance) / max_length);
  }
};

inline EditRatio edit_ratio(std::string_view a, std::string_view b) {
  const auto ua = unicode::decode(a);
  const auto ub = unicode::decode(b);
  return {levenshtein_distance(std::u32string_view(ua), std::u32string_view(ub)),
          std::max(ua.size(), ub.size())};
}

/// 1 - distance / max(|a|, |b|); 1 when both strings are empty.
inline double levenshtein_similarity(std::string_view a, std::string_view b) {
  return edit_ratio(a, b).similarity();
}

inline constexpr std::size_t kBaselineHistogramBins = 10;

struct BaselineReport {
  std::vector<double> similarities;      // dataset order
  std::optional<double> pearson_vs_gold;  // empty when undefined
  std::string pearson_status = "ok";      // "ok" or the error kind name
  Histogram histogram{{}, false};
};

/// Similarity of lowercased anchor vs lowercased target for one record.
inline EditRatio baseline_ratio(const PhraseRecord& r) {
  return edit_ratio(unicode::lower(r.anchor), unicode::lower(r.target));
}

inline double baseline_similarity(const PhraseRecord& r) { return baseline_ratio(r).similarity(); }

inline BaselineReport run_baseline(const Dataset& d) {
  if (d.empty()) throw Error(ErrorKind::EmptyDataset, "baseline needs at least one record");
  BaselineReport rep;
  rep.similarities.reserve(d.size());
  rep.histogram = Histogram::of_unit_interval({}, kBaselineHistogramBins);
  std::vector<double> gold;
  gold.reserve(d.size());
  for (const auto& r : d.records) {
    const auto ratio = baseline_ratio(r);
    rep.similarities.push_back(ratio.similarity());
    ++rep.histogram.bins[ratio.bin(kBaselineHistogramBins)].count;
    gold.push_back(r.score);
  }
  try {
    rep.pearson_vs_gold = pearson(gold, rep.similarities);
  } catch (const Error& e) {
    rep.pearson_status = std::string(to_string(e.kind()));
  }
  return rep;
}

}  // namespace sslab
