#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sslab/error.hpp"

namespace sslab::io {

enum class RealFormat {
  fixed6,    // "%.6f", the report format
  shortest,  // shortest round-trip form, for config echoes
};

namespace detail {

inline void append_real(std::string& out, double v, RealFormat fmt) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  if (fmt == RealFormat::fixed6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string_view s(buf);
    if (s == "-0.000000") s = "0.000000";
    out += s;
    return;
  }
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string_view s(buf, static_cast<std::size_t>(end - buf));
  out += s;
  // keep the value typed as a real when it happens to be integral
  if (s.find_first_of(".eE") == std::string_view::npos) out += ".0";
}

inline void indent_to(std::string& out, int depth) { out.append(static_cast<std::size_t>(depth) * 2, ' '); }

inline void dump(const nlohmann::json& j, std::string& out, int depth, RealFormat fmt) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        indent_to(out, depth + 1);
        out += nlohmann::json(it.key()).dump();
        out += ": ";
        dump(it.value(), out, depth + 1, fmt);
      }
      out += "\n";
      indent_to(out, depth);
      out += "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ",\n";
        first = false;
        indent_to(out, depth + 1);
        dump(v, out, depth + 1, fmt);
      }
      out += "\n";
      indent_to(out, depth);
      out += "]";
      return;
    }
    case nlohmann::json::value_t::number_float:
      append_real(out, j.get<double>(), fmt);
      return;
    default:
      out += j.dump();
      return;
  }
}

}  // namespace detail

/// Deterministic serialization: sorted keys, two-space indent, trailing newline.
inline std::string dump(const nlohmann::json& j, RealFormat fmt = RealFormat::fixed6) {
  std::string out;
  detail::dump(j, out, 0, fmt);
  out += "\n";
  return out;
}

inline std::string format_fixed6(double v) {
  std::string out;
  detail::append_real(out, v, RealFormat::fixed6);
  return out;
}

inline void write_text(const std::filesystem::path& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw Error(ErrorKind::IoError, "read failed for " + path.string());
  return content;
}

}  // namespace sslab::io
