#pragma once

// Seeded phrase-pair generator. Gold similarity is the token overlap of
// anchor and target, |A n T| / |A u T|, so it is learnable from the text.

#include <algorithm>
#include <cstdio>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sslab/corpus.hpp"
#include "sslab/csv.hpp"
#include "sslab/rng.hpp"

namespace synth {

inline std::string word(std::size_t i) {
  static const char* const syll[] = {"ka", "lo", "mi", "ten", "sor", "vex", "du", "pra", "gil", "nor", "ze", "bu"};
  std::string w = syll[i % 12];
  w += syll[(i / 12) % 12];
  if (i >= 144) w += syll[(i / 144) % 12];
  return w;
}

inline std::string join(const std::vector<std::size_t>& ws) {
  std::string out;
  for (auto w : ws) {
    if (!out.empty()) out += ' ';
    out += word(w);
  }
  return out;
}

inline double overlap(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end()), su = sa;
  su.insert(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (auto w : sa) inter += sb.count(w);
  return static_cast<double>(inter) / static_cast<double>(su.size());
}

/// `n` records over a `vocab`-word lexicon; about half the target words are
/// copied from the anchor.
inline sslab::Dataset overlap_dataset(std::size_t n, std::uint64_t seed, std::size_t vocab = 60) {
  sslab::Rng rng(seed);
  static const char* const contexts[] = {"A47", "B60", "C07", "G06", "H04"};
  std::vector<sslab::PhraseRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    auto distinct_words = [&](std::size_t count) {
      std::vector<std::size_t> ws;
      while (ws.size() < count) {
        const auto w = static_cast<std::size_t>(rng.below(vocab));
        if (std::find(ws.begin(), ws.end(), w) == ws.end()) ws.push_back(w);
      }
      return ws;
    };
    const auto anchor = distinct_words(2 + rng.below(2));
    std::vector<std::size_t> target;
    for (auto w : anchor) {
      if (rng.uniform() < 0.5) target.push_back(w);
    }
    const std::size_t extra = 1 + rng.below(2);
    while (target.size() < extra + 1) {
      const auto w = static_cast<std::size_t>(rng.below(vocab));
      if (std::find(target.begin(), target.end(), w) == target.end()) target.push_back(w);
    }
    rng.shuffle(std::span<std::size_t>(target));
    recs.push_back({"s" + std::to_string(i), join(anchor), join(target), contexts[rng.below(5)],
                    overlap(anchor, target)});
  }
  return sslab::Dataset::from_records(std::move(recs));
}

inline std::string to_csv(const sslab::Dataset& d) {
  std::string out = "id,anchor,target,context,score\n";
  for (const auto& r : d.records) {
    char score[32];
    std::snprintf(score, sizeof score, "%.4f", r.score);
    out += sslab::csv::escape(r.id) + "," + sslab::csv::escape(r.anchor) + "," + sslab::csv::escape(r.target) +
           "," + sslab::csv::escape(r.context) + "," + score + "\n";
  }
  return out;
}

}  // namespace synth
