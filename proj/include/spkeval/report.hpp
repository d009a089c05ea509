#pragma once
// Report plumbing: every CLI run emits JSON (and usually CSV) containing the
// toolkit version, the resolved configuration, the global seed, and digests
// of every input file, so identical runs produce byte-identical reports.
// The thread count is deliberately absent from the echo: it never changes
// results.

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spkeval/core.hpp"
#include "spkeval/io.hpp"

namespace spkeval::report {

using ojson = nlohmann::ordered_json;

inline std::string digest_bytes(const std::string& bytes) {
  return "fnv1a64:" + to_hex(fnv1a64_bytes(bytes.data(), bytes.size()));
}

inline std::string digest_file(const std::string& path) {
  return digest_bytes(ioutil::read_binary_file(path));
}

class Inputs {
 public:
  void add_file(const std::string& label, const std::string& path) {
    entries_.emplace_back(label, digest_file(path));
  }
  void add_digest(const std::string& label, const std::string& digest) {
    entries_.emplace_back(label, digest);
  }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline ojson envelope(const std::string& command, std::uint64_t seed, const ojson& config,
                      const Inputs& inputs) {
  ojson j;
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  ojson in = ojson::object();
  for (const auto& [label, digest] : inputs.entries()) in[label] = digest;
  j["inputs"] = in;
  return j;
}

inline void write_json_file(const std::string& path, const ojson& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw input_error("I/O failure writing '" + path + "'");
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw input_error("cannot write '" + path + "'");
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace spkeval::report
