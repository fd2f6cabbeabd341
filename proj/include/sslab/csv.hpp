#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sslab/error.hpp"

namespace sslab::csv {

struct Row {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based physical line where the record starts
};

/// RFC 4180 reader: comma separator, double-quote quoting with "" escapes,
/// CRLF or LF terminators, embedded newlines inside quotes. Blank lines are skipped.
/// A quote appearing inside an unquoted field, or text after a closing quote,
/// is reported with the offending record index (header = 0); the reader then
/// resumes at the next physical line.
class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {
    if (text_.starts_with("\xEF\xBB\xBF")) text_.remove_prefix(3);
  }

  /// Reads the next record into `row`; returns false at end of input.
  bool next(Row& row) {
    row.fields.clear();
    while (pos_ < text_.size() && (text_[pos_] == '\n' || text_[pos_] == '\r')) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
    if (pos_ >= text_.size()) return false;
    row.line = line_;
    std::string field;
    bool quoted = false;
    bool after_quote = false;
    bool at_field_start = true;
    for (;;) {
      if (pos_ >= text_.size()) {
        if (quoted) fail("unterminated quoted field");
        row.fields.push_back(std::move(field));
        break;
      }
      const char c = text_[pos_++];
      if (quoted) {
        if (c == '"') {
          if (pos_ < text_.size() && text_[pos_] == '"') {
            field.push_back('"');
            ++pos_;
          } else {
            quoted = false;
            after_quote = true;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == ',') {
        row.fields.push_back(std::move(field));
        field.clear();
        after_quote = false;
        at_field_start = true;
        continue;
      }
      if (c == '\n' || c == '\r') {
        if (c == '\r' && pos_ < text_.size() && text_[pos_] == '\n') ++pos_;
        ++line_;
        row.fields.push_back(std::move(field));
        break;
      }
      if (after_quote) {
        fail("unexpected character after closing quote");
      }
      if (c == '"') {
        if (!at_field_start) {
          fail("quote inside unquoted field");
        }
        quoted = true;
        at_field_start = false;
        continue;
      }
      at_field_start = false;
      field.push_back(c);
    }
    ++index_;
    return true;
  }

  /// Index the next record will receive (header is record 0).
  std::size_t record_index() const noexcept { return index_; }

 private:
  /// Skips the rest of the physical line so a lenient caller can resume, then throws.
  [[noreturn]] void fail(const char* message) {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    const std::size_t bad = index_++;
    throw Error(ErrorKind::MalformedCsv, message, bad);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t index_ = 0;
};

/// Quotes a field when it contains a separator, quote or line break.
inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace sslab::csv
