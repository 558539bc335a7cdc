// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/trainer/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "freqdyn/common/parallel.hpp"
#include "freqdyn/common/rng.hpp"
#include "freqdyn/crnn/checkpoint.hpp"
#include "freqdyn/datakit/labels.hpp"
#include "freqdyn/evalkit/postprocess.hpp"
#include "freqdyn/numerics/ops.hpp"

namespace freqdyn::trainer {
namespace fs = std::filesystem;
using datakit::Sample;
using datakit::Supervision;

AugmentConfig AugmentConfig::none() {
  AugmentConfig a;
  a.filter = FilterMode::off;
  a.time_mask_frames = 0;
  a.freq_mask_bins = 0;
  a.shift_frames = 0;
  a.noise_sigma = 0;
  a.mixup_prob = 0;
  return a;
}

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.batch_strong = 4;
  c.batch_weak = 4;
  c.batch_unlabeled = 8;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs == 0) fail("epochs must be >= 1");
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(ema_alpha > 0 && ema_alpha < 1)) fail("ema_alpha must lie in (0,1)");
  if (loss.ramp_epochs > static_cast<double>(epochs)) fail("ramp_epochs must not exceed epochs");
  if (loss.ramp_epochs < 0 || loss.w_weak < 0 || loss.w_cons_max < 0) fail("loss weights must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("Adam betas must lie in [0,1)");
  if (batch_strong + batch_weak + batch_unlabeled == 0) fail("empty batch composition");
  if (!(grad_clip > 0)) fail("grad_clip must be > 0");
  if (augment.filter_min_bands < 1 || augment.filter_max_bands < augment.filter_min_bands) {
    fail("filter bands need 1 <= min <= max");
  }
  if (augment.mixup_prob < 0 || augment.mixup_prob > 1) fail("mixup_prob must lie in [0,1]");
  if (val_batch == 0) fail("val_batch must be >= 1");
}

double cosine_lr(double base, double epoch, std::size_t epochs) {
  const double p = std::clamp(epoch / static_cast<double>(epochs), 0.0, 1.0);
  return base * (1.0 + std::cos(std::numbers::pi * p)) / 2.0;
}

template <class T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double alpha) {
  if (teacher.size() != student.size() || teacher.bn_states().size() != student.bn_states().size()) {
    throw ShapeError("ema_update: parameter lists differ");
  }
  const double beta = 1.0 - alpha;
  auto blend = [&](Tensor<T>& t, const Tensor<T>& s, const std::string& name) {
    require_shape(s, t.shape(), ("ema_update " + name).c_str());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(alpha * t[i] + beta * s[i]);
  };
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    blend(teacher.param(i).value, student.param(i).value, teacher.param(i).name);
  }
  for (std::size_t i = 0; i < teacher.bn_states().size(); ++i) {
    auto& t = teacher.bn_states()[i];
    const auto& s = student.bn_states()[i];
    blend(t.state.running_mean, s.state.running_mean, t.name);
    blend(t.state.running_var, s.state.running_var, t.name);
  }
}

template void ema_update<float>(ParamStore<float>&, const ParamStore<float>&, double);
template void ema_update<double>(ParamStore<double>&, const ParamStore<double>&, double);

double output_hop(const features::MelConfig& mel, std::size_t time_pool) {
  return static_cast<double>(mel.hop) / mel.sample_rate * static_cast<double>(time_pool);
}

Sample make_sample(const Tensor<double>& logmel, const std::vector<datakit::EventInterval>& events,
                   const std::vector<std::size_t>& weak, Supervision sup, std::size_t time_pool,
                   std::size_t n_classes, double frame_hop) {
  const Tensor<double> cropped = crnn::truncate_frames(logmel, time_pool);
  Sample s;
  s.mel = Tensor<float>(cropped.shape());
  for (std::size_t i = 0; i < cropped.size(); ++i) s.mel[i] = static_cast<float>(cropped[i]);
  const std::size_t Tp = cropped.dim(1) / time_pool;
  s.strong = sup == Supervision::strong ? evalkit::rasterize(events, Tp, n_classes, frame_hop)
                                        : Tensor<float>({Tp, n_classes});
  s.weak = Tensor<float>({n_classes});
  for (std::size_t c : weak) {
    if (c >= n_classes) throw std::out_of_range("make_sample: class id out of range");
    s.weak[c] = 1.0f;
  }
  s.supervision = sup;
  return s;
}

TrainData make_train_data(const datakit::Dataset& ds, const features::MelConfig& mel,
                          std::size_t time_pool, std::size_t n_classes) {
  TrainData d;
  d.frame_hop = output_hop(mel, time_pool);
  auto convert = [&](const std::vector<datakit::ClipExample>& clips, std::vector<Sample>& out,
                     std::vector<std::string>& names) {
    out.resize(clips.size());
    names.resize(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
      const auto& c = clips[i];
      const auto lm = features::log_mel(c.wave, mel);
      out[i] = make_sample(lm, c.events, c.weak, c.supervision, time_pool, n_classes, d.frame_hop);
      names[i] = c.name;
    });
  };
  convert(ds.strong, d.strong, d.strong_names);
  convert(ds.weak, d.weak, d.weak_names);
  convert(ds.unlabeled, d.unlabeled, d.unlabeled_names);
  for (const auto& c : ds.strong) d.strong_events.push_back(c.events);
  return d;
}

Tensor<float> stack_inputs(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ShapeError("stack_inputs: empty batch");
  const std::size_t F = batch[0]->mel.dim(0), T = batch[0]->mel.dim(1);
  Tensor<float> x({batch.size(), 1, F, T});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    require_shape(batch[b]->mel, {F, T}, "stack_inputs");
    const Tensor<float> n = features::minmax_normalize(batch[b]->mel);
    std::copy(n.raw(), n.raw() + n.size(), x.raw() + b * F * T);
  }
  return x;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

/// Augments normalized-domain samples in place. Filter augmentation runs
/// first on the log-mel, then min-max scaling, then everything else.
void augment_sample(Sample& s, const AugmentConfig& a, std::size_t pool, std::mt19937_64& rng) {
  if (a.filter != FilterMode::off && a.filter_db > 0) {
    datakit::FilterKind kind = a.filter == FilterMode::linear ? datakit::FilterKind::linear
                                                              : datakit::FilterKind::step;
    if (a.filter == FilterMode::mixed) {
      std::bernoulli_distribution pick(a.filter_mixed_step_prob);
      kind = pick(rng) ? datakit::FilterKind::step : datakit::FilterKind::linear;
    }
    s.mel = datakit::filter_augment(s.mel, kind, a.filter_min_bands,
                                    std::min(a.filter_max_bands, s.mel.dim(0)), a.filter_db, rng);
  }
  s.mel = features::minmax_normalize(s.mel);
  if (a.time_mask_frames > 0) datakit::mask_time(s, a.time_mask_frames, pool, rng);
  if (a.freq_mask_bins > 0) datakit::mask_freq(s.mel, a.freq_mask_bins, rng);
  if (a.shift_frames > 0) datakit::frame_shift(s, a.shift_frames, pool, rng);
  if (a.noise_sigma > 0) datakit::add_noise(s.mel, a.noise_sigma, rng);
}

struct Batch {
  Tensor<float> x;
  BatchTargets targets;
};

Batch assemble(std::vector<Sample> strong, std::vector<Sample> weak, std::vector<Sample> unl,
               const AugmentConfig& a, std::size_t pool, std::mt19937_64& rng, bool augment) {
  auto prep = [&](std::vector<Sample>& v) {
    for (auto& s : v) {
      if (augment) {
        augment_sample(s, a, pool, rng);
      } else {
        s.mel = features::minmax_normalize(s.mel);
      }
    }
    if (augment && v.size() > 1 && a.mixup_prob > 0) {
      std::bernoulli_distribution coin(a.mixup_prob);
      if (coin(rng)) {
        const double lambda = datakit::sample_beta(a.mixup_alpha, rng);
        std::vector<std::size_t> perm(v.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const std::vector<Sample> orig = v;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = datakit::mixup(orig[i], orig[perm[i]], lambda);
      }
    }
  };
  prep(strong);
  prep(weak);
  prep(unl);
  std::vector<const Sample*> all;
  for (auto* v : {&strong, &weak, &unl}) {
    for (const auto& s : *v) all.push_back(&s);
  }
  Batch b;
  const std::size_t F = all.at(0)->mel.dim(0), T = all[0]->mel.dim(1);
  b.x = Tensor<float>({all.size(), 1, F, T});
  for (std::size_t i = 0; i < all.size(); ++i) {
    require_shape(all[i]->mel, {F, T}, "batch features");
    std::copy(all[i]->mel.raw(), all[i]->mel.raw() + F * T, b.x.raw() + i * F * T);
  }
  auto& t = b.targets;
  t.n_strong = strong.size();
  t.n_weak = weak.size();
  t.n_unlabeled = unl.size();
  if (!strong.empty()) {
    const std::size_t Tp = strong[0].strong.dim(0), C = strong[0].strong.dim(1);
    t.strong_target = Tensor<float>({strong.size(), Tp, C});
    for (std::size_t i = 0; i < strong.size(); ++i) {
      std::copy(strong[i].strong.raw(), strong[i].strong.raw() + Tp * C, t.strong_target.raw() + i * Tp * C);
    }
  }
  const std::size_t nl = strong.size() + weak.size();
  if (nl > 0) {
    const std::size_t C = (strong.empty() ? weak[0] : strong[0]).weak.size();
    t.weak_target = Tensor<float>({nl, C});
    for (std::size_t i = 0; i < nl; ++i) {
      const Sample& s = i < strong.size() ? strong[i] : weak[i - strong.size()];
      std::copy(s.weak.raw(), s.weak.raw() + C, t.weak_target.raw() + i * C);
    }
  }
  return b;
}

/// Per-epoch visiting order of one split, wrapping with a fresh shuffle.
class Cursor {
 public:
  Cursor(std::size_t n, std::mt19937_64& rng) : n_(n), rng_(rng) { refill(); }
  std::size_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::size_t n_;
  std::mt19937_64& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

double bce_value(const Tensor<float>& p, const Tensor<float>& l, std::size_t count) {
  double s = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), kBceClamp, 1.0 - kBceClamp);
    s -= l[i] * std::log(q) + (1 - l[i]) * std::log1p(-q);
  }
  return s;
}

void write_state(const fs::path& p, std::size_t epoch, std::size_t step) {
  std::ofstream os(p);
  os << "epoch " << epoch << "\nstep " << step << '\n';
  if (!os) throw std::ios_base::failure("cannot write " + p.string());
}

ParamStore<float> moment_store(const ParamStore<float>& like, const std::vector<Tensor<float>>& values) {
  ParamStore<float> s;
  for (std::size_t i = 0; i < like.size(); ++i) s.add(like.param(i).name, values[i]);
  return s;
}

}  // namespace

MeanTeacher::MeanTeacher(const crnn::ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed)
    : cfg_(cfg), tc_(tc), seed_(seed), student_(crnn::Model<float>::build(cfg, seed)),
      teacher_(crnn::Model<float>::build(cfg, seed)) {
  tc_.validate();
  for (const auto& p : student_.params().params()) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

std::size_t MeanTeacher::steps_per_epoch(const TrainData& d) const {
  std::size_t steps = 0;
  auto upd = [&](std::size_t n, std::size_t b) {
    if (n > 0 && b > 0) steps = std::max(steps, (n + b - 1) / b);
  };
  upd(d.strong.size(), tc_.batch_strong);
  upd(d.weak.size(), tc_.batch_weak);
  upd(d.unlabeled.size(), tc_.batch_unlabeled);
  if (steps == 0) throw std::invalid_argument("fit: no training clips for the configured batch composition");
  return steps;
}

EpochLog MeanTeacher::train_epoch(const TrainData& data) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t steps = steps_per_epoch(data);
  const std::size_t pool = cfg_.time_pool();
  auto order_rng = substream(seed_, "train.order", epoch_);
  const std::size_t ns = data.strong.empty() ? 0 : tc_.batch_strong;
  const std::size_t nw = data.weak.empty() ? 0 : tc_.batch_weak;
  const std::size_t nu = data.unlabeled.empty() ? 0 : tc_.batch_unlabeled;
  Cursor cs(data.strong.size(), order_rng), cw(data.weak.size(), order_rng),
      cu(data.unlabeled.size(), order_rng);

  EpochLog log;
  log.epoch = epoch_;
  log.lr = cosine_lr(tc_.lr, static_cast<double>(epoch_), tc_.epochs);
  auto& store = student_.params();
  for (std::size_t s = 0; s < steps; ++s) {
    auto aug_rng = substream(seed_, "train.augment", step_);
    std::vector<Sample> bs, bw, bu;
    for (std::size_t i = 0; i < ns; ++i) bs.push_back(data.strong[cs.next()]);
    for (std::size_t i = 0; i < nw; ++i) bw.push_back(data.weak[cw.next()]);
    for (std::size_t i = 0; i < nu; ++i) bu.push_back(data.unlabeled[cu.next()]);
    const Batch batch = assemble(std::move(bs), std::move(bw), std::move(bu), tc_.augment, pool, aug_rng, true);

    const auto teacher_out = teacher_.predict(batch.x);

    Tape<float> tape;
    const auto vars = store.bind(tape, true);
    auto drop_rng = substream(seed_, "train.dropout", step_);
    nn::Context<float> ctx{tape, vars, store, true, &drop_rng, nullptr};
    const auto out = student_.forward(ctx, tape.constant(batch.x));
    const double epoch_pos = static_cast<double>(epoch_) + static_cast<double>(s) / static_cast<double>(steps);
    LossComponents parts;
    const Var loss = total_loss(tape, out.strong, out.weak, teacher_out.strong, teacher_out.weak,
                                batch.targets, static_cast<double>(epoch_), tc_.loss, parts);
    if (!std::isfinite(parts.total)) throw DivergenceError(epoch_, s, "non-finite loss");
    tape.backward(loss);

    double norm2 = 0;
    std::vector<const Tensor<float>*> grads(vars.size(), nullptr);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (!tape.has_grad(vars[i])) continue;
      grads[i] = &tape.grad(vars[i]);
      for (float g : grads[i]->data()) norm2 += static_cast<double>(g) * g;
    }
    if (!std::isfinite(norm2)) throw DivergenceError(epoch_, s, "non-finite gradient");
    const double norm = std::sqrt(norm2);
    const double clip = norm > tc_.grad_clip ? tc_.grad_clip / norm : 1.0;

    ++step_;
    const double lr = cosine_lr(tc_.lr, epoch_pos, tc_.epochs);
    const double c1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < vars.size(); ++i) {
      auto& p = store.param(i).value;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = grads[i] ? clip * (*grads[i])[k] : 0.0;
        const double mk = tc_.beta1 * m[k] + (1 - tc_.beta1) * g;
        const double vk = tc_.beta2 * v[k] + (1 - tc_.beta2) * g * g;
        m[k] = static_cast<float>(mk);
        v[k] = static_cast<float>(vk);
        p[k] = static_cast<float>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + tc_.adam_eps));
      }
    }
    ema_update(teacher_.params(), store, tc_.ema_alpha);

    log.mean.strong += parts.strong;
    log.mean.weak += parts.weak;
    log.mean.consistency += parts.consistency;
    log.mean.total += parts.total;
    log.mean.w_cons = parts.w_cons;
  }
  const double n = static_cast<double>(steps);
  log.mean.strong /= n;
  log.mean.weak /= n;
  log.mean.consistency /= n;
  log.mean.total /= n;
  ++epoch_;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

double MeanTeacher::validation_loss(crnn::Model<float>& model, const TrainData& val) const {
  double strong_sum = 0, weak_sum = 0;
  std::size_t strong_n = 0, weak_n = 0;
  auto run = [&](const std::vector<Sample>& clips, bool strong) {
    for (std::size_t i = 0; i < clips.size(); i += tc_.val_batch) {
      std::vector<const Sample*> b;
      for (std::size_t j = i; j < std::min(clips.size(), i + tc_.val_batch); ++j) b.push_back(&clips[j]);
      const auto pred = model.predict(stack_inputs(b));
      const std::size_t C = pred.weak.dim(1), Tp = pred.strong.dim(1);
      for (std::size_t k = 0; k < b.size(); ++k) {
        if (strong) {
          Tensor<float> p({Tp * C}), l({Tp * C});
          std::copy_n(pred.strong.raw() + k * Tp * C, Tp * C, p.raw());
          std::copy_n(b[k]->strong.raw(), Tp * C, l.raw());
          strong_sum += bce_value(p, l, Tp * C);
          strong_n += Tp * C;
        }
        Tensor<float> p({C});
        std::copy_n(pred.weak.raw() + k * C, C, p.raw());
        weak_sum += bce_value(p, b[k]->weak, C);
        weak_n += C;
      }
    }
  };
  run(val.strong, true);
  run(val.weak, false);
  const double s = strong_n ? strong_sum / static_cast<double>(strong_n) : 0.0;
  const double w = weak_n ? weak_sum / static_cast<double>(weak_n) : 0.0;
  return s + tc_.loss.w_weak * w;
}

void MeanTeacher::save(const fs::path& dir) const {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  crnn::save_checkpoint(tmp / "student", student_);
  crnn::save_checkpoint(tmp / "teacher", teacher_);
  crnn::save_params(tmp / "adam_m", moment_store(student_.params(), m_));
  crnn::save_params(tmp / "adam_v", moment_store(student_.params(), v_));
  write_state(tmp / "state.txt", epoch_, step_);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

void MeanTeacher::load(const fs::path& dir) {
  crnn::load_params(dir / "student", student_.params());
  crnn::load_params(dir / "teacher", teacher_.params());
  auto ms = moment_store(student_.params(), m_), vs = moment_store(student_.params(), v_);
  crnn::load_params(dir / "adam_m", ms);
  crnn::load_params(dir / "adam_v", vs);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = ms.param(i).value;
    v_[i] = vs.param(i).value;
  }
  std::ifstream is(dir / "state.txt");
  std::string k1, k2;
  if (!(is >> k1 >> epoch_ >> k2 >> step_) || k1 != "epoch" || k2 != "step") {
    throw std::ios_base::failure("bad training state in " + dir.string());
  }
}

std::string log_header() {
  return "epoch,strong_bce,weak_bce,consistency,w_cons,total,lr,val_student,val_teacher,seconds";
}

std::string log_row(const EpochLog& e) {
  std::ostringstream os;
  os << e.epoch << ',' << fmt(e.mean.strong) << ',' << fmt(e.mean.weak) << ','
     << fmt(e.mean.consistency) << ',' << fmt(e.mean.w_cons) << ',' << fmt(e.mean.total) << ','
     << fmt(e.lr) << ',' << (e.has_val ? fmt(e.val_student) : "") << ','
     << (e.has_val ? fmt(e.val_teacher) : "") << ',' << fmt(std::round(e.seconds * 1000) / 1000);
  return os.str();
}

namespace {

std::vector<EpochLog> read_log(const fs::path& p, std::size_t keep) {
  std::vector<EpochLog> out;
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  while (out.size() < keep && std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 9) throw std::ios_base::failure("malformed log row in " + p.string());
    EpochLog e;
    e.epoch = std::stoul(f[0]);
    e.mean = {std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
    e.lr = std::stod(f[6]);
    e.has_val = !f[7].empty();
    if (e.has_val) {
      e.val_student = std::stod(f[7]);
      e.val_teacher = std::stod(f[8]);
    }
    if (f.size() > 9) e.seconds = std::stod(f[9]);
    out.push_back(e);
  }
  return out;
}

void write_log(const fs::path& p, const std::vector<EpochLog>& log) {
  std::ofstream os(p);
  os << log_header() << '\n';
  for (const auto& e : log) os << log_row(e) << '\n';
  if (!os) throw std::ios_base::failure("cannot write " + p.string());
}

}  // namespace

FitResult fit(MeanTeacher& mt, const TrainData& train, const TrainData* val, const FitOptions& opt) {
  FitResult res;
  const auto& tc = mt.config();
  if (opt.out_dir) fs::create_directories(*opt.out_dir);
  if (opt.resume && opt.out_dir && fs::exists(*opt.out_dir / "last" / "state.txt")) {
    mt.load(*opt.out_dir / "last");
    res.log = read_log(*opt.out_dir / "log.csv", mt.epochs_done());
    for (const auto& e : res.log) {
      if (e.has_val && (!res.best_epoch || e.val_student < res.best_val)) {
        res.best_epoch = e.epoch;
        res.best_val = e.val_student;
      }
    }
  }
  std::size_t ran = 0;
  while (mt.epochs_done() < tc.epochs) {
    if (opt.max_epochs_this_run && ran >= *opt.max_epochs_this_run) return res;
    EpochLog e = mt.train_epoch(train);
    ++ran;
    if (val && (!val->strong.empty() || !val->weak.empty())) {
      e.has_val = true;
      e.val_student = mt.validation_loss(mt.student(), *val);
      e.val_teacher = mt.validation_loss(mt.teacher(), *val);
      if (!std::isfinite(e.val_student)) throw DivergenceError(e.epoch, 0, "non-finite validation loss");
      if (!res.best_epoch || e.val_student < res.best_val) {
        res.best_epoch = e.epoch;
        res.best_val = e.val_student;
        if (opt.out_dir) {
          crnn::save_checkpoint(*opt.out_dir / "best" / "student", mt.student());
          crnn::save_checkpoint(*opt.out_dir / "best" / "teacher", mt.teacher());
        }
      }
    }
    res.log.push_back(e);
    if (opt.out_dir) {
      mt.save(*opt.out_dir / "last");
      write_log(*opt.out_dir / "log.csv", res.log);
    }
    if (opt.on_epoch) opt.on_epoch(e);
  }
  if (opt.out_dir) {
    crnn::save_checkpoint(*opt.out_dir / "student", mt.student());
    crnn::save_checkpoint(*opt.out_dir / "teacher", mt.teacher());
  }
  return res;
}

}  // namespace freqdyn::trainer
