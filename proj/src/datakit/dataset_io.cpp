// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/datakit/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "freqdyn/common/parallel.hpp"
#include "freqdyn/common/rng.hpp"
#include "freqdyn/datakit/labels.hpp"
#include "freqdyn/features/wav.hpp"

namespace freqdyn::datakit {
namespace fs = std::filesystem;

std::vector<ClipExample> make_validation(std::uint64_t seed, std::size_t count, const SynthConfig& cfg) {
  std::vector<ClipExample> out(count);
  parallel_for(count, [&](std::size_t i) {
    ClipExample c = synth_clip(derive_seed(seed, "dataset.validation", i), cfg);
    char buf[64];
    std::snprintf(buf, sizeof buf, "validation_%05zu.wav", i);
    c.name = buf;
    c.supervision = Supervision::strong;
    out[i] = std::move(c);
  });
  return out;
}

std::uint64_t fnv1a64(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::ios_base::failure("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_split(const fs::path& dir, const std::string& split, const std::vector<ClipExample>& clips,
                 int sample_rate) {
  const fs::path sub = dir / split;
  fs::create_directories(sub);
  std::vector<std::string> lines(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) {
    const fs::path p = sub / clips[i].name;
    features::write_wav(p, clips[i].wave, sample_rate);
    std::ostringstream os;
    os << clips[i].name << '\t' << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(slurp(p))
       << std::dec << '\t' << clips[i].wave.size();
    lines[i] = os.str();
  });
  std::ofstream m(dir / ("manifest_" + split + ".tsv"));
  m << "filename\tfnv1a64\tsamples\n";
  for (const auto& l : lines) m << l << '\n';
  if (!m) throw std::ios_base::failure("cannot write manifest in " + dir.string());
}

std::vector<StrongRow> strong_rows(const std::vector<ClipExample>& clips) {
  std::vector<StrongRow> rows;
  for (const auto& c : clips) {
    for (const auto& e : c.events) rows.push_back({c.name, e});
  }
  return rows;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& ds, const std::vector<ClipExample>& validation,
                   int sample_rate) {
  fs::create_directories(dir);
  const std::vector<std::pair<std::string, const std::vector<ClipExample>*>> splits{
      {"strong", &ds.strong}, {"weak", &ds.weak}, {"unlabeled", &ds.unlabeled}, {"validation", &validation}};
  for (const auto& [name, clips] : splits) write_split(dir, name, *clips, sample_rate);
  write_strong_tsv(dir / "strong.tsv", strong_rows(ds.strong));
  write_strong_tsv(dir / "validation.tsv", strong_rows(validation));
  std::vector<WeakRow> weak;
  for (const auto& c : ds.weak) weak.push_back({c.name, c.weak});
  write_weak_tsv(dir / "weak.tsv", weak);
}

std::vector<ClipExample> read_split(const fs::path& dir, const std::string& split) {
  const auto& known = split_names();
  if (std::find(known.begin(), known.end(), split) == known.end()) {
    throw std::invalid_argument("unknown split \"" + split + "\"");
  }
  const fs::path manifest = dir / ("manifest_" + split + ".tsv");
  std::ifstream is(manifest);
  if (!is) throw std::ios_base::failure("cannot read " + manifest.string());
  std::vector<std::string> names;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    names.push_back(line.substr(0, line.find('\t')));
  }
  Supervision sup = Supervision::unlabeled;
  std::map<std::string, std::vector<EventInterval>> events;
  std::map<std::string, std::vector<std::size_t>> weak;
  if (split == "strong" || split == "validation") {
    sup = Supervision::strong;
    events = group_by_file(read_strong_tsv(dir / (split + ".tsv")), names);
  } else if (split == "weak") {
    sup = Supervision::weak;
    for (auto& r : read_weak_tsv(dir / "weak.tsv")) weak[r.filename] = r.classes;
  } else if (split != "unlabeled") {
    throw std::invalid_argument("unknown split \"" + split + "\"");
  }
  std::vector<ClipExample> out(names.size());
  parallel_for(names.size(), [&](std::size_t i) {
    ClipExample c;
    c.name = names[i];
    c.wave = features::read_wav(dir / split / names[i]).samples;
    c.supervision = sup;
    if (sup == Supervision::strong) {
      c.events = events.at(names[i]);
      c.weak = classes_of(c.events);
    } else if (sup == Supervision::weak) {
      const auto it = weak.find(names[i]);
      if (it == weak.end()) throw LabelError("no weak labels for " + names[i]);
      c.weak = it->second;
    }
    out[i] = std::move(c);
  });
  return out;
}

}  // namespace freqdyn::datakit
