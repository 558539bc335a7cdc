// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/crnn/checkpoint.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>

#include "freqdyn/numerics/tensor_io.hpp"

namespace freqdyn::crnn {
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream os(p, mode);
  if (!os) throw std::ios_base::failure("cannot write " + p.string());
  return os;
}

std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(p, mode);
  if (!is) throw std::ios_base::failure("cannot read " + p.string());
  return is;
}

}  // namespace

template <class T>
void save_params(const fs::path& dir, const ParamStore<T>& store) {
  fs::create_directories(dir);
  auto manifest = open_out(dir / "manifest.txt");
  auto data = open_out(dir / "params.fdyt", std::ios::binary);
  manifest << "freqdyn-checkpoint 1\n";
  for (const auto& p : store.params()) {
    manifest << "param " << p.name << ' ' << shape_str(p.value.shape()) << '\n';
    io::write_fdyt(data, p.value);
  }
  for (const auto& b : store.bn_states()) {
    manifest << "bn " << b.name << ' ' << b.state.running_mean.size() << '\n';
    io::write_fdyt(data, b.state.running_mean);
    io::write_fdyt(data, b.state.running_var);
  }
  if (!manifest || !data) throw std::ios_base::failure("write failed in " + dir.string());
}

template <class T>
void load_params(const fs::path& dir, ParamStore<T>& store) {
  auto manifest = open_in(dir / "manifest.txt");
  auto data = open_in(dir / "params.fdyt", std::ios::binary);
  std::string header;
  std::getline(manifest, header);
  if (header != "freqdyn-checkpoint 1") throw io::FormatError(dir.string() + ": unrecognized manifest");
  std::size_t pi = 0, bi = 0;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, name;
    ls >> kind >> name;
    if (kind == "param") {
      if (pi >= store.size() || store.param(pi).name != name) {
        throw io::FormatError(dir.string() + ": parameter " + name + " does not match the model");
      }
      Tensor<T> t = io::read_fdyt<T>(data);
      require_shape(t, store.param(pi).value.shape(), name.c_str());
      store.param(pi++).value = std::move(t);
    } else if (kind == "bn") {
      auto& bns = store.bn_states();
      if (bi >= bns.size() || bns[bi].name != name) {
        throw io::FormatError(dir.string() + ": batch-norm state " + name + " does not match the model");
      }
      Tensor<T> mean = io::read_fdyt<T>(data);
      Tensor<T> var = io::read_fdyt<T>(data);
      require_shape(mean, bns[bi].state.running_mean.shape(), name.c_str());
      require_shape(var, bns[bi].state.running_var.shape(), name.c_str());
      bns[bi].state.running_mean = std::move(mean);
      bns[bi++].state.running_var = std::move(var);
    } else {
      throw io::FormatError(dir.string() + ": bad manifest line \"" + line + "\"");
    }
  }
  if (pi != store.size() || bi != store.bn_states().size()) {
    throw io::FormatError(dir.string() + ": checkpoint lists fewer tensors than the model has");
  }
}

void save_checkpoint(const fs::path& dir, const Model<float>& model) {
  save_params(dir, model.params());
  auto cfg = open_out(dir / "config.yaml");
  cfg << to_yaml(model.config());
}

ModelConfig load_checkpoint_config(const fs::path& dir) {
  const fs::path p = dir / "config.yaml";
  if (!fs::exists(p)) throw std::ios_base::failure("cannot read " + p.string());
  ModelConfig cfg;
  try {
    apply_yaml(cfg, YAML::LoadFile(p.string()));
  } catch (const YAML::Exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
  return cfg;
}

Model<float> load_checkpoint(const fs::path& dir) {
  auto model = Model<float>::build(load_checkpoint_config(dir), 0);
  load_params(dir, model.params());
  return model;
}

template void save_params<float>(const fs::path&, const ParamStore<float>&);
template void save_params<double>(const fs::path&, const ParamStore<double>&);
template void load_params<float>(const fs::path&, ParamStore<float>&);
template void load_params<double>(const fs::path&, ParamStore<double>&);

}  // namespace freqdyn::crnn
