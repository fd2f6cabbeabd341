#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslab/csv.hpp"
#include "sslab/error.hpp"
#include "sslab/json_writer.hpp"
#include "sslab/unicode.hpp"

namespace sslab {

struct PhraseRecord {
  std::string id;
  std::string anchor;
  std::string target;
  std::string context;  // classification code, e.g. "A47"
  double score = 0.0;   // in [0, 1]

  friend bool operator==(const PhraseRecord&, const PhraseRecord&) = default;
};

/// Throws the first violated record invariant. `row` is attached to the error.
inline void validate_record(const PhraseRecord& r, std::optional<std::size_t> row = std::nullopt) {
  auto blank = [](std::string_view s) { return unicode::trim(s).empty(); };
  if (blank(r.id)) throw Error(ErrorKind::EmptyField, "id", row);
  if (blank(r.anchor)) throw Error(ErrorKind::EmptyField, "anchor", row);
  if (blank(r.target)) throw Error(ErrorKind::EmptyField, "target", row);
  if (blank(r.context)) throw Error(ErrorKind::EmptyField, "context", row);
  if (!(r.score >= 0.0 && r.score <= 1.0)) {
    throw Error(ErrorKind::ScoreOutOfRange, "score " + std::to_string(r.score), row);
  }
}

struct SkippedRow {
  std::size_t row = 0;
  ErrorKind reason{};
};

struct Dataset {
  std::vector<PhraseRecord> records;
  std::string source_path;
  std::vector<SkippedRow> skipped;  // lenient loads only

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  const PhraseRecord& operator[](std::size_t i) const { return records[i]; }

  /// Builds a dataset from in-memory records, enforcing every record and id invariant.
  static Dataset from_records(std::vector<PhraseRecord> records, std::string source = {}) {
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < records.size(); ++i) {
      validate_record(records[i], i + 1);
      if (!ids.insert(records[i].id).second) {
        throw Error(ErrorKind::DuplicateId, records[i].id, i + 1);
      }
    }
    Dataset d;
    d.records = std::move(records);
    d.source_path = std::move(source);
    return d;
  }

  /// Copy restricted to `indices`, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.source_path = source_path;
    d.records.reserve(indices.size());
    for (auto i : indices) d.records.push_back(records.at(i));
    return d;
  }
};

inline constexpr std::string_view kRequiredColumns[] = {"id", "anchor", "target", "context",
                                                        "score"};

/// Parses CSV text. Strict mode throws on the first invalid row; lenient mode
/// skips it and records the reason. Header problems are always fatal.
inline Dataset parse_dataset(std::string_view text, bool strict, std::string source = {}) {
  csv::Reader reader(text);
  csv::Row header;
  if (!reader.next(header)) throw Error(ErrorKind::EmptyDataset, "no header row in " + source);

  std::size_t col[5];
  std::string missing;
  for (std::size_t c = 0; c < 5; ++c) {
    auto it = std::find_if(header.fields.begin(), header.fields.end(), [&](const std::string& h) {
      return unicode::lower(unicode::trim(h)) == kRequiredColumns[c];
    });
    if (it == header.fields.end()) {
      if (!missing.empty()) missing += ", ";
      missing += kRequiredColumns[c];
    } else {
      col[c] = static_cast<std::size_t>(it - header.fields.begin());
    }
  }
  if (!missing.empty()) throw Error(ErrorKind::MissingColumn, "missing column(s): " + missing);

  Dataset d;
  d.source_path = std::move(source);
  std::unordered_set<std::string> ids;
  csv::Row row;
  for (;;) {
    std::size_t row_no = reader.record_index();
    try {
      if (!reader.next(row)) break;
      if (row.fields.size() != header.fields.size()) {
        throw Error(ErrorKind::MalformedCsv,
                    "expected " + std::to_string(header.fields.size()) + " fields, got " +
                        std::to_string(row.fields.size()),
                    row_no);
      }
      PhraseRecord r;
      r.id = row.fields[col[0]];
      r.anchor = row.fields[col[1]];
      r.target = row.fields[col[2]];
      r.context = row.fields[col[3]];
      const std::string score_text = unicode::trim(row.fields[col[4]]);
      if (score_text.empty()) throw Error(ErrorKind::EmptyField, "score", row_no);
      const char* first = score_text.data();
      const char* last = first + score_text.size();
      auto [ptr, ec] = std::from_chars(first, last, r.score);
      if (ec != std::errc() || ptr != last) {
        throw Error(ErrorKind::MalformedCsv, "score is not a number: " + score_text, row_no);
      }
      validate_record(r, row_no);
      if (ids.contains(r.id)) throw Error(ErrorKind::DuplicateId, r.id, row_no);
      ids.insert(r.id);
      d.records.push_back(std::move(r));
    } catch (const Error& e) {
      if (strict) throw;
      d.skipped.push_back({e.row().value_or(row_no), e.kind()});
    }
  }
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& path, bool strict = true) {
  return parse_dataset(io::read_text(path), strict, path.string());
}

// ---------------------------------------------------------------------------
// Exploratory statistics

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;

  friend bool operator==(const HistogramBin&, const HistogramBin&) = default;
};

struct Histogram {
  std::vector<HistogramBin> bins;
  bool integral = true;  // integer bin bounds (counts, lengths) vs real bounds

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& b : bins) t += b.count;
    return t;
  }

  /// Dense bins [i*w, (i+1)*w) from 0 up to the bin holding the largest value.
  static Histogram of_counts(std::span<const std::size_t> values, std::size_t width) {
    Histogram h;
    if (values.empty()) return h;
    const std::size_t top = *std::max_element(values.begin(), values.end()) / width;
    h.bins.resize(top + 1);
    for (std::size_t i = 0; i <= top; ++i) {
      h.bins[i].lo = static_cast<double>(i * width);
      h.bins[i].hi = static_cast<double>((i + 1) * width);
    }
    for (auto v : values) ++h.bins[v / width].count;
    return h;
  }

  /// `n_bins` equal-width bins over [0, 1]; the last bin is closed.
  static Histogram of_unit_interval(std::span<const double> values, std::size_t n_bins);

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

/// Equal-width bin index on [0, 1]. Values within 1e-9 below an edge are
/// counted in the upper bin so decimal inputs such as 0.7 land predictably.
inline std::size_t unit_bin(double value, std::size_t n_bins) {
  const double scaled = std::floor(value * static_cast<double>(n_bins) + 1e-9);
  if (scaled <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(scaled), n_bins - 1);
}

inline Histogram Histogram::of_unit_interval(std::span<const double> values, std::size_t n_bins) {
  Histogram h;
  h.integral = false;
  h.bins.resize(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i) {
    h.bins[i].lo = static_cast<double>(i) / static_cast<double>(n_bins);
    h.bins[i].hi = static_cast<double>(i + 1) / static_cast<double>(n_bins);
  }
  for (double v : values) ++h.bins[unit_bin(v, n_bins)].count;
  return h;
}

using TermCounts = std::map<std::string, std::size_t>;

struct EdaReport {
  std::size_t record_count = 0;
  std::size_t unique_anchor_count = 0;
  std::size_t unique_target_count = 0;
  std::size_t unique_context_count = 0;
  double score_mean = 0.0;
  std::size_t char_bin_width = 1;
  std::size_t word_bin_width = 1;

  /// column ("anchor", "target", "context") -> token -> count
  std::map<std::string, TermCounts> term_frequency;

  Histogram anchor_char_count;
  Histogram anchor_word_count;
  Histogram target_char_count;
  Histogram target_word_count;
  Histogram score{{}, false};
  Histogram anchors_per_target;
  Histogram anchors_per_context;
  Histogram targets_per_context;

  std::vector<std::pair<std::string, const Histogram*>> histograms() const {
    return {{"anchor_char_count", &anchor_char_count},
            {"anchor_word_count", &anchor_word_count},
            {"anchors_per_context", &anchors_per_context},
            {"anchors_per_target", &anchors_per_target},
            {"score", &score},
            {"target_char_count", &target_char_count},
            {"target_word_count", &target_word_count},
            {"targets_per_context", &targets_per_context}};
  }
};

inline constexpr std::size_t kScoreHistogramBins = 10;

namespace detail {

/// For each key, the number of distinct values grouped under it.
inline std::vector<std::size_t> distinct_group_sizes(
    const std::vector<PhraseRecord>& records, std::string PhraseRecord::*key,
    std::string PhraseRecord::*member) {
  std::map<std::string, std::set<std::string>> groups;
  for (const auto& r : records) groups[r.*key].insert(r.*member);
  std::vector<std::size_t> sizes;
  sizes.reserve(groups.size());
  for (const auto& [k, members] : groups) sizes.push_back(members.size());
  return sizes;
}

}  // namespace detail

inline EdaReport compute_eda(const Dataset& d, std::size_t char_bin_width = 5,
                             std::size_t word_bin_width = 1) {
  if (d.empty()) throw Error(ErrorKind::EmptyDataset, "cannot summarize an empty dataset");
  if (char_bin_width == 0 || word_bin_width == 0) {
    throw Error(ErrorKind::InvalidConfig, "histogram bin widths must be >= 1");
  }
  EdaReport r;
  r.record_count = d.size();
  r.char_bin_width = char_bin_width;
  r.word_bin_width = word_bin_width;

  std::set<std::string> anchors, targets, contexts;
  std::vector<std::size_t> a_chars, a_words, t_chars, t_words;
  std::vector<double> scores;
  auto& tf_anchor = r.term_frequency["anchor"];
  auto& tf_target = r.term_frequency["target"];
  auto& tf_context = r.term_frequency["context"];
  double score_sum = 0.0;
  for (const auto& rec : d.records) {
    anchors.insert(rec.anchor);
    targets.insert(rec.target);
    contexts.insert(rec.context);
    const auto at = unicode::tokenize(rec.anchor);
    const auto tt = unicode::tokenize(rec.target);
    for (const auto& t : at) ++tf_anchor[t];
    for (const auto& t : tt) ++tf_target[t];
    for (const auto& t : unicode::tokenize(rec.context)) ++tf_context[t];
    a_chars.push_back(unicode::char_count(rec.anchor));
    t_chars.push_back(unicode::char_count(rec.target));
    a_words.push_back(at.size());
    t_words.push_back(tt.size());
    scores.push_back(rec.score);
    score_sum += rec.score;
  }
  r.unique_anchor_count = anchors.size();
  r.unique_target_count = targets.size();
  r.unique_context_count = contexts.size();
  r.score_mean = score_sum / static_cast<double>(d.size());

  r.anchor_char_count = Histogram::of_counts(a_chars, char_bin_width);
  r.target_char_count = Histogram::of_counts(t_chars, char_bin_width);
  r.anchor_word_count = Histogram::of_counts(a_words, word_bin_width);
  r.target_word_count = Histogram::of_counts(t_words, word_bin_width);
  r.score = Histogram::of_unit_interval(scores, kScoreHistogramBins);

  using detail::distinct_group_sizes;
  r.anchors_per_target =
      Histogram::of_counts(distinct_group_sizes(d.records, &PhraseRecord::target, &PhraseRecord::anchor), 1);
  r.anchors_per_context =
      Histogram::of_counts(distinct_group_sizes(d.records, &PhraseRecord::context, &PhraseRecord::anchor), 1);
  r.targets_per_context =
      Histogram::of_counts(distinct_group_sizes(d.records, &PhraseRecord::context, &PhraseRecord::target), 1);
  return r;
}

/// Histogram CSV with header `bin_lo,bin_hi,count`.
inline std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (const auto& b : h.bins) {
    if (h.integral) {
      out += std::to_string(static_cast<long long>(b.lo)) + "," +
             std::to_string(static_cast<long long>(b.hi));
    } else {
      out += io::format_fixed6(b.lo) + "," + io::format_fixed6(b.hi);
    }
    out += "," + std::to_string(b.count) + "\n";
  }
  return out;
}

inline nlohmann::json eda_summary_json(const EdaReport& r) {
  nlohmann::json j;
  j["record_count"] = r.record_count;
  j["unique_anchor_count"] = r.unique_anchor_count;
  j["unique_target_count"] = r.unique_target_count;
  j["unique_context_count"] = r.unique_context_count;
  j["score_mean"] = r.score_mean;
  j["char_bin_width"] = r.char_bin_width;
  j["word_bin_width"] = r.word_bin_width;
  nlohmann::json distinct = nlohmann::json::object();
  nlohmann::json total = nlohmann::json::object();
  for (const char* col : {"anchor", "context", "target"}) {
    std::size_t n_distinct = 0, n_total = 0;
    if (auto it = r.term_frequency.find(col); it != r.term_frequency.end()) {
      n_distinct = it->second.size();
      for (const auto& [tok, c] : it->second) n_total += c;
    }
    distinct[col] = n_distinct;
    total[col] = n_total;
  }
  j["distinct_terms"] = distinct;
  j["total_terms"] = total;
  nlohmann::json populations = nlohmann::json::object();
  for (const auto& [name, h] : r.histograms()) populations[name] = h->total();
  j["histogram_totals"] = populations;
  return j;
}

/// Scalar statistics recovered from a summary JSON (for round-trip checks and tooling).
struct EdaScalars {
  std::size_t record_count = 0;
  std::size_t unique_anchor_count = 0;
  std::size_t unique_target_count = 0;
  std::size_t unique_context_count = 0;
  double score_mean = 0.0;

  friend bool operator==(const EdaScalars&, const EdaScalars&) = default;
};

inline EdaScalars scalars_of(const EdaReport& r) {
  return {r.record_count, r.unique_anchor_count, r.unique_target_count, r.unique_context_count,
          r.score_mean};
}

inline EdaScalars parse_eda_summary(std::string_view json_text) {
  const auto j = nlohmann::json::parse(json_text);
  return {j.at("record_count").get<std::size_t>(), j.at("unique_anchor_count").get<std::size_t>(),
          j.at("unique_target_count").get<std::size_t>(),
          j.at("unique_context_count").get<std::size_t>(), j.at("score_mean").get<double>()};
}

/// Writes eda_summary.json, hist_<name>.csv per histogram and terms_<column>.csv
/// per term-frequency column. Returns the written paths in sorted order.
inline std::vector<std::filesystem::path> export_eda(const EdaReport& r,
                                                     const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    auto p = out_dir / name;
    io::write_text(p, content);
    written.push_back(p);
  };
  emit("eda_summary.json", io::dump(eda_summary_json(r)));
  for (const auto& [name, h] : r.histograms()) emit("hist_" + name + ".csv", histogram_csv(*h));
  for (const char* col : {"anchor", "context", "target"}) {
    std::string content = "token,count\n";
    if (auto it = r.term_frequency.find(col); it != r.term_frequency.end()) {
      for (const auto& [tok, c] : it->second) content += csv::escape(tok) + "," + std::to_string(c) + "\n";
    }
    emit(std::string("terms_") + col + ".csv", content);
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace sslab
