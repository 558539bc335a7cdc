// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdyn/datakit/synth.hpp"

// DESED-style label tables.
//   strong: filename<TAB>onset<TAB>offset<TAB>event_label
//   weak:   filename<TAB>event_labels (comma-joined)
// Times are written in shortest round-trip form, so parse(write(x)) == x.
namespace freqdyn::datakit {

class LabelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StrongRow {
  std::string filename;
  EventInterval event;
  friend bool operator==(const StrongRow&, const StrongRow&) = default;
};

struct WeakRow {
  std::string filename;
  std::vector<std::size_t> classes;  // sorted
  friend bool operator==(const WeakRow&, const WeakRow&) = default;
};

void write_strong_tsv(std::ostream& os, const std::vector<StrongRow>& rows);
void write_weak_tsv(std::ostream& os, const std::vector<WeakRow>& rows);
std::vector<StrongRow> read_strong_tsv(std::istream& is);
std::vector<WeakRow> read_weak_tsv(std::istream& is);

std::vector<StrongRow> read_strong_tsv(const std::filesystem::path& path);
std::vector<WeakRow> read_weak_tsv(const std::filesystem::path& path);
void write_strong_tsv(const std::filesystem::path& path, const std::vector<StrongRow>& rows);
void write_weak_tsv(const std::filesystem::path& path, const std::vector<WeakRow>& rows);

/// Groups strong rows by filename (every name in `files` gets an entry,
/// possibly empty).
std::map<std::string, std::vector<EventInterval>> group_by_file(
    const std::vector<StrongRow>& rows, const std::vector<std::string>& files = {});

std::string format_seconds(double s);

}  // namespace freqdyn::datakit
