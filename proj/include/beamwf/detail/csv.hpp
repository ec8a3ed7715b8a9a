#pragma once

// Deterministic CSV assembly. Doubles go through %.17g so a value survives a
// round trip exactly and two runs of the same scenario produce byte-identical
// files; fields containing separators or quotes are quoted the usual way.

#include <cstdio>
#include <string>

namespace beamwf::detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvRow {
 public:
  explicit CsvRow(std::string& out) : out_(out) {}
  ~CsvRow() { out_ += '\n'; }

  CsvRow& field(const std::string& s) {
    sep();
    if (s.find_first_of(",\"\n") == std::string::npos) {
      out_ += s;
      return *this;
    }
    out_ += '"';
    for (const char c : s) {
      if (c == '"') out_ += '"';
      out_ += c;
    }
    out_ += '"';
    return *this;
  }
  CsvRow& num(double v) {
    sep();
    out_ += g17(v);
    return *this;
  }
  CsvRow& num(int v) {
    sep();
    out_ += std::to_string(v);
    return *this;
  }

 private:
  void sep() {
    if (!first_) out_ += ',';
    first_ = false;
  }
  std::string& out_;
  bool first_ = true;
};

}  // namespace beamwf::detail
