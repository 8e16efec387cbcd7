#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfglq/errors.hpp"

namespace mfglq {

/// RFC-4180 rows: comma separated, CRLF terminated, quotes only when needed.
/// Numbers carry 15 significant digits with '.' as the decimal mark; absent
/// values are empty fields.
class CsvWriter {
 public:
  CsvWriter& field(const std::string& s) {
    sep();
    if (s.find_first_of(",\"\r\n") != std::string::npos) {
      line_ += '"';
      for (char c : s) {
        if (c == '"') line_ += '"';
        line_ += c;
      }
      line_ += '"';
    } else {
      line_ += s;
    }
    return *this;
  }
  CsvWriter& field(double v) {
    sep();
    if (std::isnan(v)) return *this;  // blank
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.15g", v);
    line_ += buf;
    return *this;
  }
  CsvWriter& field(long v) {
    sep();
    line_ += std::to_string(v);
    return *this;
  }
  CsvWriter& field(int v) { return field(static_cast<long>(v)); }
  CsvWriter& comment_header(const std::string& text) {
    body_ += "# " + text + "\r\n";
    return *this;
  }
  void end_row() {
    body_ += line_;
    body_ += "\r\n";
    line_.clear();
    first_ = true;
  }
  const std::string& str() const { return body_; }

 private:
  void sep() {
    if (!first_) line_ += ',';
    first_ = false;
  }
  std::string body_;
  std::string line_;
  bool first_ = true;
};

/// Write-then-rename so a reader never sees a half-written artifact.
inline void write_file_atomic(const std::filesystem::path& target,
                              const std::string& content) {
  namespace fs = std::filesystem;
  fs::create_directories(target.parent_path().empty() ? fs::path(".")
                                                      : target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw cache_error("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw cache_error("short write: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw cache_error("cannot replace " + target.string() + ": " + ec.message());
}

}  // namespace mfglq
