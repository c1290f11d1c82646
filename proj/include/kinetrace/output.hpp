#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kinetrace/errors.hpp"

#include "json.hpp"

namespace kinetrace {

// --- hashing -----------------------------------------------------------------

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes)));
  return std::string(buf);
}

// --- formatting --------------------------------------------------------------

// Shortest round-trippable-ish decimal; '.' separator regardless of locale
// because snprintf with the C locale is used throughout.
inline std::string format_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::string(buf);
}

// --- CSV ---------------------------------------------------------------------

// Rows buffered in memory and flushed in one write: files are small and the
// checksum needs the exact bytes anyway. LF endings, header row first.
class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header) {
    row(std::move(header));
  }

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) body_ += ',';
      body_ += quote(cells[i]);
    }
    body_ += '\n';
  }

  const std::string& bytes() const { return body_; }

 private:
  static std::string quote(const std::string& s) {
    bool need = s.find_first_of(",\"\n") != std::string::npos;
    if (!need) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
    return out;
  }
  std::string body_;
};

// --- files + manifest --------------------------------------------------------

struct EmittedFile {
  std::string name;
  std::string checksum;
  std::uint64_t size = 0;
};

inline std::string iso_utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec)
      throw ConfigError("outputs: cannot create directory '" + dir + "'");
    started_ = iso_utc_now();
  }

  const std::string& path() const { return dir_; }

  std::string file_path(const std::string& name) const {
    return (std::filesystem::path(dir_) / name).string();
  }

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream out(file_path(name), std::ios::binary | std::ios::trunc);
    if (!out)
      throw ConfigError("outputs: cannot write '" + file_path(name) + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    files_.push_back({name, fnv1a_hex(bytes), bytes.size()});
  }

  // The manifest lists every file in the directory with its checksum, not
  // just the ones this run wrote: different subcommands share an output
  // directory and the directory-level inventory must stay complete. It is
  // written last and carries the only timestamps, so data files stay
  // byte-identical across reruns.
  void write_manifest(const std::string& config_hash, const json& tolerances,
                      const json& results,
                      const std::string& name = "manifest.json") {
    std::vector<EmittedFile> inventory = files_;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      if (!entry.is_regular_file()) continue;
      std::string fname = entry.path().filename().string();
      if (fname == name) continue;
      bool written = false;
      for (const EmittedFile& f : files_) written = written || f.name == fname;
      if (written) continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      std::string data = ss.str();
      inventory.push_back({fname, fnv1a_hex(data), data.size()});
    }
    std::sort(inventory.begin(), inventory.end(),
              [](const EmittedFile& a, const EmittedFile& b) {
                return a.name < b.name;
              });

    json m;
    m["config_hash"] = config_hash;
    m["software"] = "kinetrace 1.0.0";
    m["started_utc"] = started_;
    m["finished_utc"] = iso_utc_now();
    m["tolerances"] = tolerances;
    m["results"] = results;
    json files = json::array();
    for (const EmittedFile& f : inventory) {
      json e;
      e["name"] = f.name;
      e["fnv1a"] = f.checksum;
      e["bytes"] = f.size;
      files.push_back(e);
    }
    m["files"] = files;
    std::string bytes = m.dump(2);
    bytes += '\n';
    std::ofstream out(file_path(name), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  const std::vector<EmittedFile>& files() const { return files_; }

 private:
  std::string dir_;
  std::string started_;
  std::vector<EmittedFile> files_;
};

}  // namespace kinetrace
