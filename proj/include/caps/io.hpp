// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace caps::io {

// All file reads in the project go through read_text_file so tests can audit
// which paths a pipeline stage touched.
class AccessLog {
 public:
  static AccessLog& instance();
  void enable(bool on);
  void record(const std::string& path);
  std::vector<std::string> snapshot() const;
  void clear();

 private:
  bool enabled_ = false;
  std::vector<std::string> paths_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// FNV-1a 64-bit over the file bytes, hex-encoded; used for manifests.
std::string file_hash(const std::string& path);
std::string content_hash(const std::string& content);

// Shortest round-trip decimal for a double (std::to_chars), so CSV output is
// deterministic and reload-exact.
std::string format_double(double x);

// Minimal CSV: no quoting (none of our fields contain commas or newlines).
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace caps::io
