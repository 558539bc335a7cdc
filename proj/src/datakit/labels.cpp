// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/datakit/labels.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace freqdyn::datakit {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_seconds(const std::string& s, std::size_t line) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw LabelError("line " + std::to_string(line) + ": bad time '" + s + "'");
  }
  return v;
}

std::size_t parse_class(const std::string& s, std::size_t line) {
  try {
    return class_index(s);
  } catch (const std::exception&) {
    throw LabelError("line " + std::to_string(line) + ": unknown event label '" + s + "'");
  }
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

template <class F>
void open_out(const std::filesystem::path& path, F&& body) {
  std::ofstream os(path);
  if (!os) throw LabelError("cannot write " + path.string());
  body(os);
  if (!os) throw LabelError("write failed: " + path.string());
}

}  // namespace

std::string format_seconds(double s) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, s);
  return std::string(buf, p);
}

void write_strong_tsv(std::ostream& os, const std::vector<StrongRow>& rows) {
  os << "filename\tonset\toffset\tevent_label\n";
  for (const auto& r : rows) {
    os << r.filename << '\t' << format_seconds(r.event.onset) << '\t'
       << format_seconds(r.event.offset) << '\t' << class_names().at(r.event.class_id) << '\n';
  }
}

void write_weak_tsv(std::ostream& os, const std::vector<WeakRow>& rows) {
  os << "filename\tevent_labels\n";
  for (const auto& r : rows) {
    os << r.filename << '\t';
    for (std::size_t i = 0; i < r.classes.size(); ++i) {
      if (i) os << ',';
      os << class_names().at(r.classes[i]);
    }
    os << '\n';
  }
}

std::vector<StrongRow> read_strong_tsv(std::istream& is) {
  std::vector<StrongRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    strip_cr(line);
    if (line.empty()) continue;
    if (n == 1 && line.rfind("filename", 0) == 0) continue;
    const auto f = split(line, '\t');
    if (f.size() != 4) throw LabelError("line " + std::to_string(n) + ": expected 4 fields");
    StrongRow r{f[0], {parse_class(f[3], n), parse_seconds(f[1], n), parse_seconds(f[2], n)}};
    if (!(r.event.onset >= 0 && r.event.onset < r.event.offset)) {
      throw LabelError("line " + std::to_string(n) + ": onset must be >= 0 and < offset");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<WeakRow> read_weak_tsv(std::istream& is) {
  std::vector<WeakRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    strip_cr(line);
    if (line.empty()) continue;
    if (n == 1 && line.rfind("filename", 0) == 0) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw LabelError("line " + std::to_string(n) + ": expected 2 fields");
    WeakRow r{line.substr(0, tab), {}};
    const std::string rest = line.substr(tab + 1);
    if (!rest.empty()) {
      for (const auto& name : split(rest, ',')) r.classes.push_back(parse_class(name, n));
    }
    std::sort(r.classes.begin(), r.classes.end());
    r.classes.erase(std::unique(r.classes.begin(), r.classes.end()), r.classes.end());
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<StrongRow> read_strong_tsv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LabelError("cannot read " + path.string());
  return read_strong_tsv(is);
}

std::vector<WeakRow> read_weak_tsv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LabelError("cannot read " + path.string());
  return read_weak_tsv(is);
}

void write_strong_tsv(const std::filesystem::path& path, const std::vector<StrongRow>& rows) {
  open_out(path, [&](std::ostream& os) { write_strong_tsv(os, rows); });
}

void write_weak_tsv(const std::filesystem::path& path, const std::vector<WeakRow>& rows) {
  open_out(path, [&](std::ostream& os) { write_weak_tsv(os, rows); });
}

std::map<std::string, std::vector<EventInterval>> group_by_file(
    const std::vector<StrongRow>& rows, const std::vector<std::string>& files) {
  std::map<std::string, std::vector<EventInterval>> out;
  for (const auto& f : files) out[f];
  for (const auto& r : rows) out[r.filename].push_back(r.event);
  return out;
}

}  // namespace freqdyn::datakit
