#include <chrono>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "sslab/lexical.hpp"
#include "sslab/rng.hpp"
#include "support/oracles.hpp"

using namespace sslab;

namespace {

std::vector<std::string> all_strings(const std::string& alphabet, std::size_t max_len) {
  std::vector<std::string> out{""};
  std::vector<std::string> frontier{""};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::string> next;
    for (const auto& s : frontier)
      for (char c : alphabet) next.push_back(s + c);
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

std::string random_string(Rng& rng, std::size_t max_len, const std::string& alphabet = "abc") {
  std::string s(rng.below(max_len + 1), ' ');
  for (auto& c : s) c = alphabet[rng.below(alphabet.size())];
  return s;
}

PhraseRecord rec(std::string id, std::string a, std::string t, double score) {
  return {std::move(id), std::move(a), std::move(t), "A47", score};
}

}  // namespace

TEST(Levenshtein, SpecExamples) {
  EXPECT_EQ(levenshtein_distance("abc", "abc"), 0u);
  EXPECT_EQ(levenshtein_distance("", "abc"), 3u);
  EXPECT_EQ(levenshtein_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(oracle::levenshtein("kitten", "sitting"), 3u);
}

TEST(Levenshtein, ExhaustiveAgainstRecursiveOracle) {
  const auto strings = all_strings("abc", 4);
  ASSERT_EQ(strings.size(), 1u + 3 + 9 + 27 + 81);
  for (const auto& a : strings)
    for (const auto& b : strings) ASSERT_EQ(levenshtein_distance(a, b), oracle::levenshtein(a, b)) << a << " / " << b;
}

TEST(Levenshtein, MetricProperties) {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_string(rng, 12), b = random_string(rng, 12), c = random_string(rng, 12);
    const auto ab = levenshtein_distance(a, b);
    EXPECT_EQ(ab, levenshtein_distance(b, a));
    EXPECT_LE(levenshtein_distance(a, c), ab + levenshtein_distance(b, c));
    const std::size_t diff = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
    EXPECT_GE(ab, diff);
    EXPECT_LE(ab, std::max(a.size(), b.size()));
    EXPECT_EQ(ab == 0, a == b);
  }
}

TEST(Levenshtein, CountsScalarsNotBytes) {
  EXPECT_EQ(levenshtein_distance("caf\xC3\xA9", "cafe"), 1u);
  EXPECT_EQ(levenshtein_distance("\xC3\xA9\xC3\xA9", ""), 2u);
  EXPECT_DOUBLE_EQ(levenshtein_similarity("\xE2\x82\xAC", "e"), 0.0);
}

TEST(Levenshtein, PerformanceBudget) {
  Rng rng(5);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (int i = 0; i < 10000; ++i) {
    pairs.emplace_back(random_string(rng, 100, "abcdefghij"), random_string(rng, 100, "abcdefghij"));
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t sink = 0;
  for (const auto& [a, b] : pairs) sink += levenshtein_distance(a, b);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GT(sink, 0u);
  EXPECT_LT(secs, 1.0);
}

TEST(Similarity, SpecExamples) {
  EXPECT_EQ(levenshtein_similarity("abc", "abc"), 1.0);
  EXPECT_EQ(levenshtein_similarity("", ""), 1.0);
  EXPECT_NEAR(levenshtein_similarity("abc", "abd"), 2.0 / 3.0, 1e-9);
}

TEST(Similarity, OneOnlyForEqualStrings) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_string(rng, 5), b = random_string(rng, 5);
    const double s = levenshtein_similarity(a, b);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    EXPECT_EQ(s == 1.0, a == b);
  }
}

TEST(Similarity, BinningIsExactOnEdges) {
  // 1 - 3/10 = 0.7 lands in [0.7, 0.8) even though 0.7 is not representable
  EXPECT_EQ((EditRatio{3, 10}.bin(10)), 7u);
  EXPECT_EQ((EditRatio{0, 10}.bin(10)), 9u);
  EXPECT_EQ((EditRatio{10, 10}.bin(10)), 0u);
  EXPECT_EQ((EditRatio{0, 0}.bin(10)), 9u);
}

TEST(Baseline, IdenticalPairsReportZeroVariance) {
  const auto d = Dataset::from_records({rec("1", "Gear", "gear", 0.5), rec("2", "shaft", "shaft", 0.25),
                                        rec("3", "pump", "PUMP", 1.0), rec("4", "valve", "valve", 0.0)});
  const auto rep = run_baseline(d);
  for (double s : rep.similarities) EXPECT_EQ(s, 1.0);
  EXPECT_FALSE(rep.pearson_vs_gold.has_value());
  EXPECT_EQ(rep.pearson_status, "ZeroVariance");
  EXPECT_EQ(rep.histogram.total(), 4u);
  EXPECT_EQ(rep.histogram.bins.size(), 10u);
  EXPECT_EQ(rep.histogram.bins[9].count, 4u);
}

TEST(Baseline, GoldEqualToSimilarityCorrelatesPerfectly) {
  std::vector<PhraseRecord> recs{rec("1", "abc", "abc", 0), rec("2", "abc", "abd", 0), rec("3", "abcd", "wxyz", 0),
                                 rec("4", "ab", "ba", 0)};
  for (auto& r : recs) r.score = levenshtein_similarity(r.anchor, r.target);
  const auto rep = run_baseline(Dataset::from_records(recs));
  ASSERT_TRUE(rep.pearson_vs_gold.has_value());
  EXPECT_NEAR(*rep.pearson_vs_gold, 1.0, 1e-12);
  EXPECT_EQ(rep.similarities.size(), 4u);
  EXPECT_EQ(rep.histogram.total(), 4u);
}

TEST(Baseline, EmptyDatasetRejected) {
  try {
    run_baseline(Dataset{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}
