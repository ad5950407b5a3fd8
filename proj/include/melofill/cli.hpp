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
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "melofill/generation.hpp"
#include "melofill/infilling.hpp"
#include "melofill/model.hpp"
#include "melofill/train.hpp"

namespace melofill {

/// Everything a command needs besides its input and output paths. Read from
/// a `key=value` file; keys are grouped by prefix (`model.`, `pretrain.`,
/// `finetune.`, `infill.`, `sample.`) and unprefixed keys are `seed`,
/// `preset`, `objective`, `task`, `n_max`, `top_ratio`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string preset = "desk";
  std::string objective = "multitask";  // or an objective name
  ModelConfig model = ModelConfig::desk();
  TrainConfig pretrain;
  TrainConfig finetune;
  FinetuneConfig finetune_task;
  InfillConfig infill;
  SamplerConfig sampler;
  int n_max = 12;
  double top_ratio = 0.25;

  RunConfig();
  /// Applies `key=value` lines on top of the current values. A `preset`
  /// line resets the model to that preset before later `model.` keys.
  void apply(const std::string& text);
  std::string serialize() const;
  std::optional<Objective> fixed_objective() const;
};

/// Thrown for unusable input: missing paths, invalid values. Exit code 2.
class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Entry point of the `melofill` tool. `args` excludes the program name.
/// Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace melofill
