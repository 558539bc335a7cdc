// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdyn/crnn/model.hpp"
#include "freqdyn/datakit/augment.hpp"
#include "freqdyn/features/mel.hpp"
#include "freqdyn/trainer/loss.hpp"

namespace freqdyn::trainer {

/// Non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step, const std::string& what)
      : std::runtime_error("divergence at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + ": " + what),
        epoch(epoch), step(step) {}
  std::size_t epoch, step;
};

enum class FilterMode { off, step, linear, mixed };

struct AugmentConfig {
  FilterMode filter = FilterMode::step;
  double filter_mixed_step_prob = 0.7;
  std::size_t filter_min_bands = 3, filter_max_bands = 6;
  double filter_db = 6.0;
  std::size_t time_mask_frames = 32;  // feature frames
  std::size_t freq_mask_bins = 0;
  std::size_t shift_frames = 16;
  double noise_sigma = 0.0;
  double mixup_prob = 0.5;
  double mixup_alpha = 0.2;

  static AugmentConfig none();
};

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double ema_alpha = 0.99;
  LossWeights loss;
  std::size_t batch_strong = 12, batch_weak = 12, batch_unlabeled = 24;
  double grad_clip = 5.0;
  AugmentConfig augment;
  std::size_t val_batch = 16;

  /// Toy batch composition (4, 4, 8).
  static TrainConfig toy();
  void validate() const;
};

/// Cosine annealing from lr at epoch 0 to zero at `epochs`; epoch may be
/// fractional.
double cosine_lr(double base, double epoch, std::size_t epochs);

/// teacher <- alpha teacher + (1 - alpha) student, parameters and BN running
/// statistics alike.
template <class T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double alpha);

/// Training-ready clips: un-normalized log-mel (n_mels x T, T a multiple of
/// the time pooling) with targets at the output frame rate.
struct TrainData {
  std::vector<datakit::Sample> strong, weak, unlabeled;
  std::vector<std::string> strong_names, weak_names, unlabeled_names;
  std::vector<std::vector<datakit::EventInterval>> strong_events;
  double frame_hop = 0.064;  // seconds per output frame
};

/// Seconds per model output frame.
double output_hop(const features::MelConfig& mel, std::size_t time_pool);

/// Log-mel and targets for every clip of a generated dataset.
TrainData make_train_data(const datakit::Dataset& ds, const features::MelConfig& mel,
                          std::size_t time_pool, std::size_t n_classes);

/// One labelled clip as a Sample (log-mel still un-normalized).
datakit::Sample make_sample(const Tensor<double>& logmel, const std::vector<datakit::EventInterval>& events,
                            const std::vector<std::size_t>& weak, datakit::Supervision sup,
                            std::size_t time_pool, std::size_t n_classes, double frame_hop);

/// Normalized model input B x 1 x F x T from samples (no augmentation).
Tensor<float> stack_inputs(const std::vector<const datakit::Sample*>& batch);

struct EpochLog {
  std::size_t epoch = 0;
  LossComponents mean;
  double lr = 0;
  double val_student = 0, val_teacher = 0;
  bool has_val = false;
  double seconds = 0;
};

std::string log_header();
std::string log_row(const EpochLog& e);

/// Mean-teacher training state. Everything random derives from `seed`
/// through per-epoch and per-step substreams, so a run restored from a
/// checkpoint continues with identical losses.
class MeanTeacher {
 public:
  MeanTeacher(const crnn::ModelConfig& cfg, const TrainConfig& tc, std::uint64_t seed);

  crnn::Model<float>& student() noexcept { return student_; }
  crnn::Model<float>& teacher() noexcept { return teacher_; }
  std::size_t epochs_done() const noexcept { return epoch_; }
  std::size_t steps_done() const noexcept { return step_; }
  const TrainConfig& config() const noexcept { return tc_; }

  /// Steps in one epoch for the given data.
  std::size_t steps_per_epoch(const TrainData& data) const;

  /// Runs one epoch and returns its averaged losses.
  EpochLog train_epoch(const TrainData& data);

  /// Strong BCE + w_weak * weak BCE of a model on labelled clips.
  double validation_loss(crnn::Model<float>& model, const TrainData& val) const;

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  crnn::ModelConfig cfg_;
  TrainConfig tc_;
  std::uint64_t seed_;
  crnn::Model<float> student_, teacher_;
  std::vector<Tensor<float>> m_, v_;
  std::size_t epoch_ = 0, step_ = 0;
};

struct FitOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints + log.csv
  bool resume = false;
  /// Stop after this many epochs in this call (simulated interruption).
  std::optional<std::size_t> max_epochs_this_run;
  std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
  std::vector<EpochLog> log;
  std::optional<std::size_t> best_epoch;
  double best_val = 0;
};

/// Trains until cfg.epochs. Writes log.csv, last/ (resume state), best/
/// (lowest student validation loss) and student/, teacher/ at the end.
FitResult fit(MeanTeacher& mt, const TrainData& train, const TrainData* val, const FitOptions& opt);

}  // namespace freqdyn::trainer
