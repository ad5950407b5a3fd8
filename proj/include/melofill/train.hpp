/* Copyright 2026 The Melofill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "melofill/infilling.hpp"
#include "melofill/model.hpp"
#include "melofill/rng.hpp"

namespace melofill {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double peak_lr = 5e-4;
  std::size_t warmup_steps = 200;
  /// Length of the cosine tail's schedule; 0 means `steps`.
  std::size_t schedule_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::size_t checkpoint_every = 0;
  std::size_t log_every = 1;
  std::uint64_t seed = 0;

  void validate() const;
  std::string serialize() const;
  /// Keys not present keep their defaults; unknown keys throw.
  static TrainConfig parse(const std::string& text);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Linear warmup from 0 to the peak, then cosine decay to 0 at the end of
/// the schedule.
double learning_rate(const TrainConfig& cfg, std::size_t step);

/// Decoupled weight decay Adam. Moments are kept in float; weight decay
/// applies only to groups flagged `decay`.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const TrainConfig& cfg, std::size_t n);

  /// One update with learning rate `lr`; `step` counts from 1.
  void update(std::vector<float>& params, const std::vector<float>& grad,
              const std::vector<ParamGroup>& groups, double lr);

  std::size_t step() const { return step_; }
  std::vector<float>& m() { return m_; }
  std::vector<float>& v() { return v_; }
  const std::vector<float>& m() const { return m_; }
  const std::vector<float>& v() const { return v_; }
  void set_step(std::size_t s) { step_ = s; }

 private:
  double beta1_ = 0.9, beta2_ = 0.98, eps_ = 1e-6, wd_ = 0.1;
  std::size_t step_ = 0;
  std::vector<float> m_, v_;
};

/// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(std::vector<float>& grad, double max_norm);

/// Step index -> batch. Must be a pure function of the step so a resumed
/// run sees the same data.
using BatchSource = std::function<std::vector<MaskedSample>(std::uint64_t step)>;

/// Multi-task (or fixed-objective) batches drawn from `corpus`.
BatchSource corpus_batches(std::span<const Melody> corpus, const Lexicon* lex,
                           const InfillConfig& infill, std::optional<Objective> objective,
                           std::size_t batch_size, std::uint64_t seed);

/// Raised when a step produces a non-finite loss or gradient.
class TrainingHalted : public std::runtime_error {
 public:
  TrainingHalted(const std::string& what, std::string dump_path)
      : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const { return dump_path_; }

 private:
  std::string dump_path_;
};

struct StepResult {
  std::size_t step = 0;  // completed steps after this one
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
};

/// Owns the model, optimizer and the dropout stream.
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  std::size_t step() const { return opt_.step(); }
  const AdamW& optimizer() const { return opt_; }
  /// Moves the final step of a resumed run. Without an explicit
  /// `schedule_steps` the cosine decay stretches to the new total.
  void set_total_steps(std::size_t steps);

  /// Runs one optimizer step on `batch`. On a non-finite loss the batch is
  /// dumped to `dump_dir` (when set) and TrainingHalted is thrown.
  StepResult train_step(const std::vector<MaskedSample>& batch);

  /// Steps until `cfg.steps`, appending `step lr loss` lines to `log` and
  /// writing `ckpt-<step>.bin` every `checkpoint_every` steps into
  /// `checkpoint_dir` (when set). Returns the last step's result.
  StepResult run(const BatchSource& source, std::ostream* log = nullptr,
                 const std::filesystem::path& checkpoint_dir = {});

  void save(const std::filesystem::path& path) const;
  /// Restores model config, train config, parameters, moments, step and rng.
  static Trainer load(const std::filesystem::path& path);
  /// Fresh optimizer and step counter on top of a checkpoint's weights.
  static Trainer from_weights(const std::filesystem::path& path, const TrainConfig& cfg);

  std::filesystem::path dump_dir;

 private:
  ModelConfig model_cfg_;
  TrainConfig cfg_;
  Model<float> model_;
  AdamW opt_;
  Rng rng_;
  std::vector<float> grad_;
};

/// Model half of a checkpoint, for inference.
Model<float> load_model(const std::filesystem::path& checkpoint);

}  // namespace melofill
