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

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "melofill/infilling.hpp"
#include "melofill/representation.hpp"

namespace melofill {

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  double dropout = 0.1;
  bool attention_dropout = true;  // on attention weights
  bool residual_dropout = true;   // on embeddings and sublayer outputs
  /// Width of each attribute's embedding table before fusion.
  std::array<int, kNumAttributes> embed_widths = {16, 16, 64, 64, 64};
  Vocabulary vocab;
  int max_seq = 256;  // source segment length; model inputs may reach 2 * max_seq
  double init_std = 0.02;
  std::uint64_t seed = 0;

  /// Two layers, d_model 64, four heads, d_ff 256.
  static ModelConfig desk();
  /// Four layers, d_model 512, eight heads, d_ff 2048.
  static ModelConfig paper();
  /// Smallest useful stack for finite-difference checks (d_model 16).
  static ModelConfig tiny();

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  int head_dim() const { return d_model / heads; }
  int fused_width() const;
  std::size_t max_input() const { return 2 * static_cast<std::size_t>(max_seq); }

  /// `key=value` lines; `parse` accepts exactly what `serialize` writes and
  /// any subset of keys (missing keys keep desk defaults).
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&);
};

/// A named block of the flat parameter vector, row-major `rows x cols`.
struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool decay = true;  // false for biases and layer-norm parameters
  std::size_t size() const { return rows * cols; }
};

/// Shapes for a config, in storage order.
std::vector<ParamGroup> parameter_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

/// Options for one forward pass.
struct ForwardOptions {
  bool train = false;             // enables dropout
  std::uint64_t dropout_seed = 0;
  bool keep_attention = false;    // fill ForwardOutput::attention
  bool parallel = true;           // parallel kernels (serial reference otherwise)
};

template <typename T>
struct ForwardOutput {
  std::size_t length = 0;      // model input length
  std::size_t prefix_len = 0;  // logits cover rows prefix_len .. length-1
  std::size_t vocab = 0;       // total vocabulary, sum over attributes
  std::vector<T> logits;       // (length - prefix_len) x vocab
  /// Per layer: heads x length x length attention weights (pre-dropout).
  std::vector<std::vector<T>> attention;

  std::size_t rows() const { return length - prefix_len; }
  /// Logits of attribute `a` at suffix row `r`.
  std::span<const T> head(const Vocabulary& v, std::size_t r, Attribute a) const;
};

/// Unified prefix/suffix transformer over compound tokens.
///
/// Each attribute has its own embedding table; the concatenated embeddings
/// are fused by one linear layer, then bar and in-bar position embeddings
/// are added. Pre-norm blocks with GELU feed-forward layers. One output
/// projection to the full vocabulary is split into per-attribute logits.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const ParamGroup& group(const std::string& name) const;
  T* data(const ParamGroup& g) { return params_.data() + g.offset; }
  const T* data(const ParamGroup& g) const { return params_.data() + g.offset; }

  /// Input representation (length x d_model) before the first block.
  std::vector<T> embed(const MaskedSample& s) const;

  ForwardOutput<T> forward(const MaskedSample& s, const ForwardOptions& opt = {}) const;

  /// Mean over suffix positions of the summed per-attribute cross-entropy.
  /// Returns 0 (with a warning) when the sample has no targets.
  T loss(const ForwardOutput<T>& out, const MaskedSample& s) const;

  /// Loss of one sample; its gradient is added to `grad` scaled by `scale`.
  T loss_and_grad(const MaskedSample& s, std::vector<T>& grad, const ForwardOptions& opt = {},
                  T scale = T(1)) const;

  /// Mean loss over a batch with the mean gradient written to `grad`.
  /// Samples are spread over a fixed number of accumulation lanes whose sums
  /// are reduced in lane order, so the result does not depend on the thread
  /// count; `opt.parallel` runs lanes on OpenMP threads.
  T batch_loss_and_grad(std::span<const MaskedSample> batch, std::vector<T>& grad,
                        const ForwardOptions& opt = {}) const;

  static constexpr std::size_t kLanes = 4;

 private:
  struct Cache;
  void run(const MaskedSample& s, const ForwardOptions& opt, Cache& c) const;
  void backward(Cache& c, std::vector<T>& grad) const;
  void check_input(const MaskedSample& s) const;

  ModelConfig cfg_;
  std::vector<ParamGroup> groups_;
  std::map<std::string, std::size_t> by_name_;
  std::vector<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Per-group comparison of analytic and central-difference gradients.
struct GradCheckGroup {
  std::string name;
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};
struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_relative_error = 0.0;
  std::string worst_group;
};

inline constexpr double kGradCheckFloor = 1e-6;

/// Double-precision gradient check of every parameter of `cfg` on `sample`
/// with central differences of step `h`. Dropout is disabled.
GradCheckReport gradient_check(const ModelConfig& cfg, const MaskedSample& sample, double h = 1e-5);

}  // namespace melofill
