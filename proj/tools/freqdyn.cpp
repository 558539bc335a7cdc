// SPDX-License-Identifier: Apache-2.0
// freqdyn: data generation, features, training, evaluation, diagnostics,
// gradient checks and parameter counts from one binary.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "freqdyn/common/parallel.hpp"
#include "freqdyn/common/rng.hpp"
#include "freqdyn/common/run_config.hpp"
#include "freqdyn/crnn/checkpoint.hpp"
#include "freqdyn/crnn/grad_suite.hpp"
#include "freqdyn/datakit/dataset_io.hpp"
#include "freqdyn/datakit/labels.hpp"
#include "freqdyn/evalkit/diagnostics.hpp"
#include "freqdyn/evalkit/pipeline.hpp"
#include "freqdyn/features/wav.hpp"
#include "freqdyn/numerics/tensor_io.hpp"
#include "freqdyn/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace freqdyn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::optional<std::size_t> threads;
  std::string config;
  std::optional<std::string> preset, variant;
  std::optional<std::size_t> K, epochs;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig::defaults() : load_run_config(c.config);
  std::string preset = c.preset.value_or("");
  if (c.variant) {
    const bool toy = (c.preset ? *c.preset : cfg.preset).rfind("toy-", 0) == 0;
    const std::string v = *c.variant == "plain" ? "baseline" : *c.variant;
    preset = toy ? "toy-" + v : v;
  }
  if (!preset.empty()) cfg = with_preset(cfg, preset);
  if (c.K) {
    cfg.model.K = *c.K;
    for (auto& d : cfg.model.branch_dilations) {
      if (d.size() > cfg.model.K) throw crnn::ConfigError("--K smaller than a branch dilation set");
    }
    if (!cfg.model.dilations.empty() && cfg.model.dilations.size() != cfg.model.K) {
      throw crnn::ConfigError("--K " + std::to_string(*c.K) + " does not match the " +
                              std::to_string(cfg.model.dilations.size()) + " configured dilations");
    }
  }
  if (c.epochs) {
    cfg.train.epochs = *c.epochs;
    cfg.train.loss.ramp_epochs = std::min<double>(cfg.train.loss.ramp_epochs, *c.epochs);
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << s;
  if (!os) throw std::ios_base::failure("cannot write " + p.string());
}

datakit::Dataset clips_from_disk(const fs::path& data, bool with_weak, bool with_unlabeled) {
  datakit::Dataset ds;
  ds.strong = datakit::read_split(data, "strong");
  if (with_weak) ds.weak = datakit::read_split(data, "weak");
  if (with_unlabeled) ds.unlabeled = datakit::read_split(data, "unlabeled");
  return ds;
}

// ---- gen --------------------------------------------------------------------

int cmd_gen(const Common& c, const std::string& out) {
  const RunConfig cfg = resolve_config(c);
  const auto ds = datakit::make_dataset(c.seed, cfg.data.n_strong, cfg.data.n_weak, cfg.data.n_unlabeled,
                                        cfg.data.synth);
  const auto val = datakit::make_validation(c.seed, cfg.data.n_val, cfg.data.synth);
  datakit::write_dataset(out, ds, val, cfg.data.synth.sample_rate);
  echo_run_config(cfg, fs::path(out) / "config.yaml");
  std::cout << "wrote " << ds.strong.size() << " strong, " << ds.weak.size() << " weak, "
            << ds.unlabeled.size() << " unlabeled, " << val.size() << " validation clips to " << out << '\n';
  return kOk;
}

// ---- features ---------------------------------------------------------------

int cmd_features(const Common& c, const std::string& in, const std::string& out, bool raw) {
  const RunConfig cfg = resolve_config(c);
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      if (e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in);
  }
  if (files.empty()) throw std::ios_base::failure("no .wav files in " + in);
  fs::create_directories(out);
  parallel_for(files.size(), [&](std::size_t i) {
    const auto w = features::read_wav(files[i]);
    if (w.sample_rate != static_cast<int>(cfg.features.sample_rate)) {
      throw features::WavError(files[i].string() + ": sample rate " + std::to_string(w.sample_rate) +
                               " differs from the configured " + std::to_string(cfg.features.sample_rate));
    }
    auto lm = features::log_mel(w.samples, cfg.features);
    if (!raw) lm = features::minmax_normalize(lm);
    io::save_fdyt(fs::path(out) / (files[i].stem().string() + ".fdyt"), lm);
  });
  std::cout << "wrote " << files.size() << " feature files to " << out << '\n';
  return kOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Common& c, const std::string& data, const std::string& out, bool resume,
              std::optional<std::size_t> stop_after) {
  const RunConfig cfg = resolve_config(c);
  const auto& tc = cfg.train;
  const auto ds = clips_from_disk(data, tc.batch_weak > 0 && fs::exists(fs::path(data) / "manifest_weak.tsv"),
                                  tc.batch_unlabeled > 0 && fs::exists(fs::path(data) / "manifest_unlabeled.tsv"));
  const std::size_t pool = cfg.model.time_pool();
  const auto train = trainer::make_train_data(ds, cfg.features, pool, cfg.model.n_classes);
  std::optional<trainer::TrainData> val;
  if (fs::exists(fs::path(data) / "manifest_validation.tsv")) {
    datakit::Dataset vd;
    vd.strong = datakit::read_split(data, "validation");
    if (!vd.strong.empty()) val = trainer::make_train_data(vd, cfg.features, pool, cfg.model.n_classes);
  }
  fs::create_directories(out);
  echo_run_config(cfg, fs::path(out) / "config.yaml");
  trainer::MeanTeacher mt(cfg.model, tc, c.seed);
  std::cout << "model " << cfg.preset << ": " << mt.student().count_params() << " parameters, "
            << mt.steps_per_epoch(train) << " steps per epoch\n";
  trainer::FitOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.max_epochs_this_run = stop_after;
  opt.on_epoch = [](const trainer::EpochLog& e) {
    std::printf("epoch %3zu  loss %.5f  strong %.5f  weak %.5f  cons %.5f  lr %.6f", e.epoch, e.mean.total,
                e.mean.strong, e.mean.weak, e.mean.consistency, e.lr);
    if (e.has_val) std::printf("  val %.5f / %.5f", e.val_student, e.val_teacher);
    std::printf("  %.1fs\n", e.seconds);
    std::fflush(stdout);
  };
  const auto res = trainer::fit(mt, train, val ? &*val : nullptr, opt);
  if (res.best_epoch) std::cout << "best validation loss " << res.best_val << " at epoch " << *res.best_epoch << '\n';
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalData {
  std::vector<std::string> names;
  std::vector<std::vector<datakit::EventInterval>> refs;
  trainer::TrainData features;
};

EvalData load_eval_split(const fs::path& data, const std::string& split, const RunConfig& cfg,
                         const crnn::ModelConfig& model) {
  if (split != "strong" && split != "validation") {
    throw UsageError("--split must be strong or validation (splits with interval labels)");
  }
  datakit::Dataset d;
  d.strong = datakit::read_split(data, split);
  EvalData e;
  e.features = trainer::make_train_data(d, cfg.features, model.time_pool(), model.n_classes);
  e.names = e.features.strong_names;
  e.refs = e.features.strong_events;
  return e;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& out, const std::string& save_pred, const std::string& pred_dir) {
  RunConfig cfg = c.config.empty() ? RunConfig::defaults() : load_run_config(c.config);
  std::vector<evalkit::ClipPrediction> preds;
  std::vector<std::vector<datakit::EventInterval>> refs;
  std::size_t n_classes = 0;
  if (!pred_dir.empty()) {
    // evaluate stored predictions: <name>.strong.fdyt (T' x C) and <name>.weak.fdyt (C)
    const auto rows = datakit::read_strong_tsv(fs::path(data) / (split + ".tsv"));
    std::vector<std::string> names;
    std::ifstream m(fs::path(data) / ("manifest_" + split + ".tsv"));
    if (!m) throw std::ios_base::failure("cannot read manifest for split " + split);
    std::string line;
    std::getline(m, line);
    while (std::getline(m, line)) {
      if (!line.empty()) names.push_back(line.substr(0, line.find('\t')));
    }
    const auto grouped = datakit::group_by_file(rows, names);
    const double hop = trainer::output_hop(cfg.features, cfg.model.time_pool());
    for (const auto& n : names) {
      const std::string stem = fs::path(n).stem().string();
      evalkit::ClipPrediction p;
      p.name = n;
      p.scores.frames = io::load_fdyt<float>(fs::path(pred_dir) / (stem + ".strong.fdyt"));
      p.scores.frame_hop = hop;
      const auto w = io::load_fdyt<float>(fs::path(pred_dir) / (stem + ".weak.fdyt"));
      p.weak.assign(w.data().begin(), w.data().end());
      preds.push_back(std::move(p));
      refs.push_back(grouped.at(n));
    }
    n_classes = preds.empty() ? 0 : preds[0].scores.n_classes();
  } else {
    if (checkpoint.empty()) throw UsageError("eval needs --checkpoint or --predictions");
    auto model = crnn::load_checkpoint(checkpoint);
    auto ed = load_eval_split(data, split, cfg, model.config());
    preds = evalkit::predict_clips(model, ed.features.strong, ed.names, ed.features.frame_hop, cfg.train.val_batch);
    refs = ed.refs;
    n_classes = model.config().n_classes;
    if (!save_pred.empty()) {
      fs::create_directories(save_pred);
      for (const auto& p : preds) {
        const std::string stem = fs::path(p.name).stem().string();
        io::save_fdyt(fs::path(save_pred) / (stem + ".strong.fdyt"), p.scores.frames);
        io::save_fdyt(fs::path(save_pred) / (stem + ".weak.fdyt"),
                      Tensor<float>({p.weak.size()}, std::vector<float>(p.weak)));
      }
    }
  }
  if (n_classes != datakit::kNumClasses) {
    throw crnn::ConfigError("class count mismatch: model has " + std::to_string(n_classes) +
                            " classes, labels use " + std::to_string(datakit::kNumClasses));
  }
  const auto report = evalkit::evaluate(preds, refs, cfg.eval);
  std::vector<std::string> names(datakit::class_names().begin(), datakit::class_names().end());
  const std::string text = evalkit::format_report(report, names);
  std::cout << text;
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "report.txt", text);
    write_text(fs::path(out) / "classes.csv", evalkit::class_csv(report, names));
    std::ostringstream sweep;
    sweep << "threshold,f1\n";
    for (const auto& p : report.sweep.curve) sweep << p.threshold << ',' << p.f1 << '\n';
    write_text(fs::path(out) / "sweep.csv", sweep.str());
  }
  return kOk;
}

// ---- diag -------------------------------------------------------------------

int cmd_diag(const Common& c, const std::vector<std::string>& checkpoints, const std::string& data,
             const std::string& split, const std::vector<std::size_t>& layers, const std::string& out) {
  RunConfig cfg = c.config.empty() ? RunConfig::defaults() : load_run_config(c.config);
  if (checkpoints.empty()) throw UsageError("diag needs at least one --checkpoint");
  // (layer, branch, freq) -> variance per model
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<std::optional<double>>> table;
  std::ostringstream pca;
  pca << "model,layer,branch,freq,clip,pc1,pc2\n";
  std::ostringstream explained;
  explained << "model,layer,branch,explained1,explained2,ratio1,ratio2\n";
  std::vector<std::string> labels;
  for (std::size_t m = 0; m < checkpoints.size(); ++m) {
    auto model = crnn::load_checkpoint(checkpoints[m]);
    const auto& mc = model.config();
    bool any = false;
    for (const auto& l : model.conv_layers()) any = any || l.is_dynamic();
    if (!any) throw crnn::ConfigError(checkpoints[m] + ": no dynamic layers");
    for (std::size_t l : layers) {
      if (l < 1 || l > mc.layers() || !model.conv_layers()[l - 1].is_dynamic()) {
        throw crnn::ConfigError("layer " + std::to_string(l) + " has no dynamic convolution");
      }
    }
    labels.push_back(crnn::to_string(mc.variant) + "@" + fs::path(checkpoints[m]).filename().string());
    auto ed = load_eval_split(data, split, cfg, mc);
    nn::AttentionRecorder<float> rec;
    for (std::size_t i = 0; i < ed.features.strong.size(); i += cfg.train.val_batch) {
      std::vector<const datakit::Sample*> b;
      for (std::size_t j = i; j < std::min(ed.features.strong.size(), i + cfg.train.val_batch); ++j) {
        b.push_back(&ed.features.strong[j]);
      }
      model.predict(trainer::stack_inputs(b), &rec);
    }
    const auto vectors = evalkit::gather_attention<float>(rec.entries);
    for (const auto& [key, sets] : vectors) {
      const auto [layer, branch] = key;
      if (!layers.empty() && std::find(layers.begin(), layers.end(), layer) == layers.end()) continue;
      evalkit::VectorSet all(0, sets[0].cols());
      for (std::size_t f = 0; f < sets.size(); ++f) {
        auto& row = table[{layer, branch, f}];
        row.resize(checkpoints.size());
        row[m] = evalkit::attention_variance(sets[f]);
        const auto base = all.rows();
        all.conservativeResize(base + sets[f].rows(), Eigen::NoChange);
        all.bottomRows(sets[f].rows()) = sets[f];
      }
      const auto p = evalkit::pca_project(all);
      explained << labels[m] << ',' << layer << ',' << branch << ',' << p.explained(0) << ',' << p.explained(1)
                << ',' << p.ratio(0) << ',' << p.ratio(1) << '\n';
      Eigen::Index r = 0;
      for (std::size_t f = 0; f < sets.size(); ++f) {
        for (Eigen::Index i = 0; i < sets[f].rows(); ++i, ++r) {
          pca << labels[m] << ',' << layer << ',' << branch << ',' << f << ',' << i << ',' << p.coords(r, 0)
              << ',' << p.coords(r, 1) << '\n';
        }
      }
    }
  }
  std::ostringstream var;
  var << "layer,branch,freq";
  for (const auto& l : labels) var << ',' << l;
  var << '\n';
  for (const auto& [key, vals] : table) {
    var << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key);
    for (const auto& v : vals) {
      var << ',';
      if (v) var << *v;
    }
    var << '\n';
  }
  fs::create_directories(out);
  write_text(fs::path(out) / "variance.csv", var.str());
  write_text(fs::path(out) / "pca.csv", pca.str());
  write_text(fs::path(out) / "pca_explained.csv", explained.str());
  std::cout << "wrote " << table.size() << " variance rows for " << labels.size() << " model(s) to " << out << '\n';
  return kOk;
}

// ---- gradcheck / params -------------------------------------------------------

int cmd_gradcheck(const std::string& scope, double tol, double eps) {
  crnn::GradSuiteOptions opt;
  opt.tolerance = tol > 0 ? tol : crnn::default_tolerance(crnn::parse_grad_scope(scope));
  opt.eps = eps;
  opt.on_case = [](const crnn::GradCaseResult& r) {
    std::printf("%-22s seed %llu  max rel err %.3e  coords %6zu  %6.2fs  %s\n", r.name.c_str(),
                static_cast<unsigned long long>(r.seed), r.max_rel_error, r.coords, r.seconds,
                r.passed ? "PASS" : "FAIL");
    if (r.fixed_params > 0) {
      std::printf("    %zu invariant parameters held fixed, max |grad| %.2e\n", r.fixed_params, r.fixed_grad);
    }
    if (!r.passed) {
      std::printf("    worst: input %zu index %zu  analytic %.9g  numeric %.9g\n", r.worst.worst_input,
                  r.worst.worst_index, r.worst.analytic, r.worst.numeric);
    }
    std::fflush(stdout);
  };
  const auto res = crnn::run_grad_suite(crnn::parse_grad_scope(scope), opt);
  std::size_t failed = 0;
  for (const auto& r : res) failed += r.passed ? 0 : 1;
  std::printf("%zu/%zu cases passed\n", res.size() - failed, res.size());
  return failed == 0 ? kOk : kNumeric;
}

int cmd_params(const Common& c, bool all) {
  if (all) {
    for (const auto& name : crnn::preset_names()) {
      const auto m = crnn::Model<float>::build(crnn::preset(name), 0);
      std::printf("%-14s %12zu\n", name.c_str(), m.count_params());
    }
    return kOk;
  }
  Common cc = c;
  if (!cc.preset && !cc.variant && cc.config.empty()) cc.preset = "baseline";
  const RunConfig cfg = resolve_config(cc);
  const auto m = crnn::Model<float>::build(cfg.model, c.seed);
  std::printf("%s: %zu parameters (%.3fM)\n", crnn::to_string(cfg.model.variant).c_str(), m.count_params(),
              static_cast<double>(m.count_params()) / 1e6);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freqdyn: frequency-adaptive convolutions for sound event detection"};
  app.require_subcommand(1);
  Common c;
  app.add_option("--seed", c.seed, "Seed for every random stream")->default_val(0);
  app.add_option("--threads", c.threads, "Worker cap (fallback: FREQDYN_THREADS)");

  auto add_model_opts = [&](CLI::App* s) {
    s->add_option("--config", c.config, "Run config (YAML)");
    s->add_option("--preset", c.preset, "Model preset, e.g. toy-fdy");
    s->add_option("--variant", c.variant, "baseline|plain|fdy|dfd|pfd|tfd|mdfd");
    s->add_option("--K", c.K, "Basis kernel count");
  };

  std::string out, data, in, checkpoint, split = "validation", scope = "primitive", save_pred, pred_dir;
  bool resume = false, raw = false, all = false;
  std::optional<std::size_t> stop_after;
  std::vector<std::string> checkpoints;
  std::vector<std::size_t> layers;
  double tol = 0, eps = 1e-5;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_model_opts(gen);
  gen->add_option("--out", out, "Output directory")->required();

  auto* feat = app.add_subcommand("features", "WAV file or directory to log-mel FDYT tensors");
  add_model_opts(feat);
  feat->add_option("--in", in, "WAV file or directory")->required();
  feat->add_option("--out", out, "Output directory")->required();
  feat->add_flag("--raw", raw, "Skip min-max normalization");

  auto* train = app.add_subcommand("train", "Mean-teacher training");
  add_model_opts(train);
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--epochs", c.epochs, "Override train.epochs");
  train->add_flag("--resume", resume, "Continue from <out>/last");
  train->add_option("--stop-after", stop_after, "Stop after this many epochs (resume later)");

  auto* eval = app.add_subcommand("eval", "Post-process, score and report");
  eval->add_option("--config", c.config, "Run config (eval section)");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--split", split, "strong or validation")->default_val("validation");
  eval->add_option("--out", out, "Write report.txt, classes.csv and sweep.csv here");
  eval->add_option("--save-predictions", save_pred, "Write per-clip prediction tensors");
  eval->add_option("--predictions", pred_dir, "Score stored prediction tensors instead of a model");

  auto* diag = app.add_subcommand("diag", "Attention PCA and variance tables");
  diag->add_option("--config", c.config, "Run config");
  diag->add_option("--checkpoint", checkpoints, "Checkpoint directory (repeat to compare)")->required();
  diag->add_option("--data", data, "Dataset directory")->required();
  diag->add_option("--split", split, "strong or validation")->default_val("validation");
  diag->add_option("--layers", layers, "Layers to report (default: all dynamic)");
  diag->add_option("--out", out, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad->add_option("--scope", scope, "primitive|variant|model")->default_val("primitive");
  grad->add_option("--tol", tol, "Maximum relative error (default 1e-4, model scope 1e-3)");
  grad->add_option("--eps", eps, "Finite-difference step")->default_val(1e-5);

  auto* params = app.add_subcommand("params", "Trainable parameter count");
  add_model_opts(params);
  params->add_flag("--all", all, "Every preset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    set_max_threads(resolve_threads(c.threads));
    if (gen->parsed()) return cmd_gen(c, out);
    if (feat->parsed()) return cmd_features(c, in, out, raw);
    if (train->parsed()) return cmd_train(c, data, out, resume, stop_after);
    if (eval->parsed()) return cmd_eval(c, checkpoint, data, split, out, save_pred, pred_dir);
    if (diag->parsed()) return cmd_diag(c, checkpoints, data, split, layers, out);
    if (grad->parsed()) return cmd_gradcheck(scope, tol, eps);
    if (params->parsed()) return cmd_params(c, all);
  } catch (const crnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const trainer::DivergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const features::WavError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const datakit::LabelError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const io::FormatError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}
