#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sslab {

enum class ErrorKind {
  MissingColumn,
  ScoreOutOfRange,
  EmptyField,
  MalformedCsv,
  DuplicateId,
  EmptyDataset,
  IoError,
  LengthMismatch,
  ZeroVariance,
  TooFewRecords,
  MaxLenTooSmall,
  AllMasked,
  ShapeMismatch,
  BadMagic,
  UnknownPreset,
  EmptySplit,
  NonFiniteLoss,
  InvalidConfig,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorKind::EmptyField: return "EmptyField";
    case ErrorKind::MalformedCsv: return "MalformedCsv";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::TooFewRecords: return "TooFewRecords";
    case ErrorKind::MaxLenTooSmall: return "MaxLenTooSmall";
    case ErrorKind::AllMasked: return "AllMasked";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnknownPreset: return "UnknownPreset";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Library-wide exception. `row()` is the 1-based data row for CSV errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> row = std::nullopt)
      : std::runtime_error(compose(kind, message, row)), kind_(kind), row_(row), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind/row prefix.
  const std::string& detail() const noexcept { return detail_; }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  static std::string compose(ErrorKind kind, const std::string& message,
                             std::optional<std::size_t> row) {
    std::string out(to_string(kind));
    if (row) out += " (row " + std::to_string(*row) + ")";
    if (!message.empty()) out += ": " + message;
    return out;
  }

  ErrorKind kind_;
  std::optional<std::size_t> row_;
  std::string detail_;
};

}  // namespace sslab
