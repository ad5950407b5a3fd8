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
#include "melofill/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "melofill/kernels.hpp"
#include "melofill/log.hpp"
#include "melofill/rng.hpp"

namespace melofill {

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.layers = 4;
  c.heads = 8;
  c.d_model = 512;
  c.d_ff = 2048;
  c.embed_widths = {64, 64, 128, 256, 128};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.dropout = 0.0;
  c.embed_widths = {8, 8, 8, 8, 8};
  return c;
}

int ModelConfig::fused_width() const {
  int w = 0;
  for (int x : embed_widths) w += x;
  return w;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  need(layers >= 1, "layers must be >= 1");
  need(heads >= 1, "heads must be >= 1");
  need(d_model >= 1, "d_model must be >= 1");
  need(d_model % heads == 0, "d_model must be divisible by heads");
  need(d_ff >= 1, "d_ff must be >= 1");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  need(max_seq >= 1, "max_seq must be >= 1");
  need(init_std > 0.0, "init_std must be > 0");
  for (int w : embed_widths) need(w >= 1, "embed_widths must be >= 1");
  for (int b : vocab.base) need(b >= 1, "vocab_base must be >= 1");
}

namespace {

template <typename C>
std::string join(const C& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::array<int, kNumAttributes> parse_five(const std::string& key, const std::string& v) {
  std::array<int, kNumAttributes> out{};
  std::istringstream in(v);
  std::string part;
  std::size_t i = 0;
  while (std::getline(in, part, ',')) {
    if (i >= out.size()) break;
    out[i++] = std::stoi(part);
  }
  if (i != out.size()) throw std::invalid_argument(key + " needs 5 comma-separated values");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("expected a boolean, got " + v);
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream o;
  o << "layers=" << layers << '\n'
    << "heads=" << heads << '\n'
    << "d_model=" << d_model << '\n'
    << "d_ff=" << d_ff << '\n'
    << "dropout=" << real(dropout) << '\n'
    << "attention_dropout=" << (attention_dropout ? "true" : "false") << '\n'
    << "residual_dropout=" << (residual_dropout ? "true" : "false") << '\n'
    << "embed_widths=" << join(embed_widths) << '\n'
    << "vocab_base=" << join(vocab.base) << '\n'
    << "bar_modulo=" << (vocab.bar_modulo ? "true" : "false") << '\n'
    << "max_seq=" << max_seq << '\n'
    << "init_std=" << real(init_std) << '\n'
    << "seed=" << seed << '\n';
  return o.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config: bad line " + line);
    const auto key = line.substr(0, eq), v = line.substr(eq + 1);
    if (key == "layers") c.layers = std::stoi(v);
    else if (key == "heads") c.heads = std::stoi(v);
    else if (key == "d_model") c.d_model = std::stoi(v);
    else if (key == "d_ff") c.d_ff = std::stoi(v);
    else if (key == "dropout") c.dropout = std::stod(v);
    else if (key == "attention_dropout") c.attention_dropout = parse_bool(v);
    else if (key == "residual_dropout") c.residual_dropout = parse_bool(v);
    else if (key == "embed_widths") c.embed_widths = parse_five(key, v);
    else if (key == "vocab_base") c.vocab.base = parse_five(key, v);
    else if (key == "bar_modulo") c.vocab.bar_modulo = parse_bool(v);
    else if (key == "max_seq") c.max_seq = std::stoi(v);
    else if (key == "init_std") c.init_std = std::stod(v);
    else if (key == "seed") c.seed = std::stoull(v);
    else throw std::invalid_argument("model config: unknown key " + key);
  }
  c.validate();
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.serialize() == b.serialize(); }

std::vector<ParamGroup> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamGroup> g;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, bool decay) {
    g.push_back({std::move(name), off, rows, cols, decay});
    off += rows * cols;
  };
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  static const char* kNames[] = {"tempo", "bar", "position", "pitch", "duration"};
  for (int a = 0; a < kNumAttributes; ++a) {
    add(std::string("embed.") + kNames[a], static_cast<std::size_t>(cfg.vocab.size(static_cast<Attribute>(a))),
        static_cast<std::size_t>(cfg.embed_widths[static_cast<std::size_t>(a)]), true);
  }
  add("fuse.weight", static_cast<std::size_t>(cfg.fused_width()), d, true);
  add("fuse.bias", 1, d, false);
  add("timing.bar", static_cast<std::size_t>(cfg.vocab.size(Attribute::Bar)), d, true);
  add("timing.position", static_cast<std::size_t>(cfg.vocab.size(Attribute::Position)), d, true);
  for (int l = 0; l < cfg.layers; ++l) {
    const auto p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.gain", 1, d, false);
    add(p + "ln1.bias", 1, d, false);
    for (const char* w : {"q", "k", "v", "o"}) {
      add(p + "attn.w" + w, d, d, true);
      add(p + "attn.b" + w, 1, d, false);
    }
    add(p + "ln2.gain", 1, d, false);
    add(p + "ln2.bias", 1, d, false);
    add(p + "ff.w1", d, ff, true);
    add(p + "ff.b1", 1, ff, false);
    add(p + "ff.w2", ff, d, true);
    add(p + "ff.b2", 1, d, false);
  }
  add("final_ln.gain", 1, d, false);
  add("final_ln.bias", 1, d, false);
  add("out.weight", d, static_cast<std::size_t>(cfg.vocab.total_size()), true);
  add("out.bias", 1, static_cast<std::size_t>(cfg.vocab.total_size()), false);
  return g;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& g : parameter_layout(cfg)) n += g.size();
  return n;
}

template <typename T>
std::span<const T> ForwardOutput<T>::head(const Vocabulary& v, std::size_t r, Attribute a) const {
  std::size_t off = 0;
  for (int i = 0; i < static_cast<int>(a); ++i) off += static_cast<std::size_t>(v.size(static_cast<Attribute>(i)));
  return {logits.data() + r * vocab + off, static_cast<std::size_t>(v.size(a))};
}

// ---------------------------------------------------------------- helpers

namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
struct Ops {
  bool par;
  void nn(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N, bool acc = false) const {
    par ? kernels::parallel::matmul(A, B, C, M, K, N, acc) : kernels::serial::matmul(A, B, C, M, K, N, acc);
  }
  void nt(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N, bool acc = false) const {
    par ? kernels::parallel::matmul_nt(A, B, C, M, K, N, acc)
        : kernels::serial::matmul_nt(A, B, C, M, K, N, acc);
  }
  void tn(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N, bool acc = false) const {
    par ? kernels::parallel::matmul_tn(A, B, C, M, K, N, acc)
        : kernels::serial::matmul_tn(A, B, C, M, K, N, acc);
  }
};

template <typename T>
void add_bias(T* y, const T* b, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += b[j];
  }
}

template <typename T>
void bias_grad(const T* dy, T* db, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) db[j] += dy[i * cols + j];
  }
}

template <typename T>
void ln_forward(const T* x, const T* gain, const T* bias, T* xhat, T* y, T* rstd, std::size_t rows,
                std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xr = x + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * rs;
      xhat[i * d + j] = h;
      y[i * d + j] = h * gain[j] + bias[j];
    }
  }
}

// Adds the input gradient to dx.
template <typename T>
void ln_backward(const T* dy, const T* xhat, const T* rstd, const T* gain, T* dgain, T* dbias, T* dx,
                 std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* g = dy + i * d;
    const T* h = xhat + i * d;
    T m1 = 0, m2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T dh = g[j] * gain[j];
      dgain[j] += g[j] * h[j];
      dbias[j] += g[j];
      m1 += dh;
      m2 += dh * h[j];
    }
    m1 /= static_cast<T>(d);
    m2 /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx[i * d + j] += rstd[i] * (g[j] * gain[j] - m1 - h[j] * m2);
    }
  }
}

template <typename T>
T gelu(T u) {
  return T(0.5) * u * (T(1) + std::erf(u * static_cast<T>(0.5 * std::numbers::sqrt2)));
}

template <typename T>
T gelu_grad(T u) {
  const T cdf = T(0.5) * (T(1) + std::erf(u * static_cast<T>(0.5 * std::numbers::sqrt2)));
  const T pdf = std::exp(T(-0.5) * u * u) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + u * pdf;
}

template <typename T>
void make_mask(std::vector<T>& mask, std::size_t n, double p, Rng& rng) {
  mask.resize(n);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng.uniform01() < p ? T(0) : keep;
}

template <typename T>
void apply_mask(T* x, const std::vector<T>& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i) x[i] *= mask[i];
}

double normal(Rng& rng) {
  const double u1 = 1.0 - rng.uniform01();
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

// ---------------------------------------------------------------- model

template <typename T>
struct Model<T>::Cache {
  struct Layer {
    std::vector<T> x_in, xhat1, h1, rstd1;
    std::vector<T> q, k, v;
    std::vector<T> p, pmask;  // heads x L x L
    std::vector<T> a;         // concatenated head outputs
    std::vector<T> omask;
    std::vector<T> x_mid, xhat2, h2, rstd2;
    std::vector<T> u, g, fmask;
  };
  std::size_t L = 0, P = 0;
  bool parallel = true;
  std::vector<std::array<int, kNumAttributes>> ids;
  std::vector<int> bar_ids, pos_ids;
  std::vector<T> e;
  std::vector<T> x0mask;
  std::vector<Layer> layers;
  std::vector<T> x_out;
  std::vector<T> xhatf, hf, rstdf;
  std::vector<T> logits;
};

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg), groups_(parameter_layout(cfg)) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    by_name_[groups_[i].name] = i;
    n += groups_[i].size();
  }
  params_.assign(n, T(0));
  Rng rng(derive_seed(cfg.seed, 0x1a17));
  for (const auto& g : groups_) {
    T* p = params_.data() + g.offset;
    if (g.name.ends_with(".gain")) {
      std::fill(p, p + g.size(), T(1));
    } else if (g.decay) {
      for (std::size_t i = 0; i < g.size(); ++i) p[i] = static_cast<T>(cfg.init_std * normal(rng));
    }
  }
}

template <typename T>
const ParamGroup& Model<T>::group(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("no parameter group " + name);
  return groups_[it->second];
}

template <typename T>
void Model<T>::check_input(const MaskedSample& s) const {
  const auto L = s.input_length();
  if (L == 0) throw std::invalid_argument("empty model input");
  if (L > cfg_.max_input()) {
    throw std::invalid_argument("model input of " + std::to_string(L) + " tokens exceeds " +
                                std::to_string(cfg_.max_input()));
  }
  if (s.bar_context.size() != L || s.position_context.size() != L) {
    throw std::invalid_argument("timing context length does not match the input");
  }
  if (s.attention.prefix_len != s.prefix.size() || s.attention.total() != L) {
    throw std::invalid_argument("attention spec does not match the input layout");
  }
  if (s.suffix.size() != s.suffix_inputs.size()) {
    throw std::invalid_argument("suffix targets and inputs differ in length");
  }
}

template <typename T>
std::vector<T> Model<T>::embed(const MaskedSample& s) const {
  check_input(s);
  const auto L = s.input_length();
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto F = static_cast<std::size_t>(cfg_.fused_width());
  const auto& v = cfg_.vocab;
  std::vector<T> e(L * F), x(L * d);
  for (std::size_t i = 0; i < L; ++i) {
    const auto ids = v.ids(s.input(i));
    std::size_t off = 0;
    for (int a = 0; a < kNumAttributes; ++a) {
      const auto& g = groups_[static_cast<std::size_t>(a)];
      const T* row = data(g) + static_cast<std::size_t>(ids[static_cast<std::size_t>(a)]) * g.cols;
      std::copy(row, row + g.cols, e.data() + i * F + off);
      off += g.cols;
    }
  }
  kernels::serial::matmul(e.data(), data(group("fuse.weight")), x.data(), L, F, d);
  add_bias(x.data(), data(group("fuse.bias")), L, d);
  const T* tb = data(group("timing.bar"));
  const T* tp = data(group("timing.position"));
  for (std::size_t i = 0; i < L; ++i) {
    const auto b = static_cast<std::size_t>(v.id(Attribute::Bar, s.bar_context[i]));
    const auto p = static_cast<std::size_t>(v.id(Attribute::Position, s.position_context[i]));
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] += tb[b * d + j] + tp[p * d + j];
  }
  return x;
}

template <typename T>
void Model<T>::run(const MaskedSample& s, const ForwardOptions& opt, Cache& c) const {
  check_input(s);
  const Ops<T> ops{opt.parallel};
  const auto& v = cfg_.vocab;
  const std::size_t L = s.input_length(), P = s.prefix.size();
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto F = static_cast<std::size_t>(cfg_.fused_width());
  const auto ff = static_cast<std::size_t>(cfg_.d_ff);
  const auto H = static_cast<std::size_t>(cfg_.heads);
  const auto dk = static_cast<std::size_t>(cfg_.head_dim());
  const std::size_t S = L - P;
  const auto V = static_cast<std::size_t>(v.total_size());
  const bool drop = opt.train && cfg_.dropout > 0.0;
  Rng rng(derive_seed(opt.dropout_seed, 0xd2, 0));
  c.L = L;
  c.P = P;
  c.parallel = opt.parallel;

  // Input representation.
  c.ids.resize(L);
  c.bar_ids.resize(L);
  c.pos_ids.resize(L);
  c.e.assign(L * F, T(0));
  for (std::size_t i = 0; i < L; ++i) {
    c.ids[i] = v.ids(s.input(i));
    c.bar_ids[i] = v.id(Attribute::Bar, s.bar_context[i]);
    c.pos_ids[i] = v.id(Attribute::Position, s.position_context[i]);
    std::size_t off = 0;
    for (int a = 0; a < kNumAttributes; ++a) {
      const auto& g = groups_[static_cast<std::size_t>(a)];
      const T* row = data(g) + static_cast<std::size_t>(c.ids[i][static_cast<std::size_t>(a)]) * g.cols;
      std::copy(row, row + g.cols, c.e.data() + i * F + off);
      off += g.cols;
    }
  }
  c.layers.resize(static_cast<std::size_t>(cfg_.layers));
  std::vector<T> x(L * d);
  ops.nn(c.e.data(), data(group("fuse.weight")), x.data(), L, F, d);
  add_bias(x.data(), data(group("fuse.bias")), L, d);
  {
    const T* tb = data(group("timing.bar"));
    const T* tp = data(group("timing.position"));
    for (std::size_t i = 0; i < L; ++i) {
      const auto b = static_cast<std::size_t>(c.bar_ids[i]);
      const auto p = static_cast<std::size_t>(c.pos_ids[i]);
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] += tb[b * d + j] + tp[p * d + j];
    }
  }
  c.x0mask.clear();
  if (drop && cfg_.residual_dropout) {
    make_mask(c.x0mask, L * d, cfg_.dropout, rng);
    apply_mask(x.data(), c.x0mask);
  }

  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  std::vector<T> qh(L * dk), kh(L * dk), vh(L * dk), ah(L * dk), pd(L * L);
  for (int l = 0; l < cfg_.layers; ++l) {
    auto& C = c.layers[static_cast<std::size_t>(l)];
    const auto pre = "layer" + std::to_string(l) + ".";
    C.x_in = x;
    C.xhat1.resize(L * d);
    C.h1.resize(L * d);
    C.rstd1.resize(L);
    ln_forward(x.data(), data(group(pre + "ln1.gain")), data(group(pre + "ln1.bias")), C.xhat1.data(),
               C.h1.data(), C.rstd1.data(), L, d);
    C.q.resize(L * d);
    C.k.resize(L * d);
    C.v.resize(L * d);
    ops.nn(C.h1.data(), data(group(pre + "attn.wq")), C.q.data(), L, d, d);
    add_bias(C.q.data(), data(group(pre + "attn.bq")), L, d);
    ops.nn(C.h1.data(), data(group(pre + "attn.wk")), C.k.data(), L, d, d);
    add_bias(C.k.data(), data(group(pre + "attn.bk")), L, d);
    ops.nn(C.h1.data(), data(group(pre + "attn.wv")), C.v.data(), L, d, d);
    add_bias(C.v.data(), data(group(pre + "attn.bv")), L, d);

    C.p.assign(H * L * L, T(0));
    C.pmask.clear();
    if (drop && cfg_.attention_dropout) make_mask(C.pmask, H * L * L, cfg_.dropout, rng);
    C.a.assign(L * d, T(0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::copy_n(C.q.data() + i * d + h * dk, dk, qh.data() + i * dk);
        std::copy_n(C.k.data() + i * d + h * dk, dk, kh.data() + i * dk);
        std::copy_n(C.v.data() + i * d + h * dk, dk, vh.data() + i * dk);
      }
      T* ph = C.p.data() + h * L * L;
      ops.nt(qh.data(), kh.data(), ph, L, dk, L);
      for (std::size_t i = 0; i < L; ++i) {
        T* row = ph + i * L;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (s.attention.allowed(i, j)) mx = std::max(mx, row[j] * scale);
        }
        T sum = 0;
        for (std::size_t j = 0; j < L; ++j) {
          if (s.attention.allowed(i, j)) {
            row[j] = std::exp(row[j] * scale - mx);
            sum += row[j];
          } else {
            row[j] = T(0);
          }
        }
        for (std::size_t j = 0; j < L; ++j) row[j] /= sum;
      }
      const T* pu = ph;
      if (!C.pmask.empty()) {
        for (std::size_t i = 0; i < L * L; ++i) pd[i] = ph[i] * C.pmask[h * L * L + i];
        pu = pd.data();
      }
      ops.nn(pu, vh.data(), ah.data(), L, L, dk);
      for (std::size_t i = 0; i < L; ++i) std::copy_n(ah.data() + i * dk, dk, C.a.data() + i * d + h * dk);
    }
    std::vector<T> o(L * d);
    ops.nn(C.a.data(), data(group(pre + "attn.wo")), o.data(), L, d, d);
    add_bias(o.data(), data(group(pre + "attn.bo")), L, d);
    C.omask.clear();
    if (drop && cfg_.residual_dropout) {
      make_mask(C.omask, L * d, cfg_.dropout, rng);
      apply_mask(o.data(), C.omask);
    }
    for (std::size_t i = 0; i < L * d; ++i) x[i] += o[i];
    C.x_mid = x;

    C.xhat2.resize(L * d);
    C.h2.resize(L * d);
    C.rstd2.resize(L);
    ln_forward(x.data(), data(group(pre + "ln2.gain")), data(group(pre + "ln2.bias")), C.xhat2.data(),
               C.h2.data(), C.rstd2.data(), L, d);
    C.u.resize(L * ff);
    C.g.resize(L * ff);
    ops.nn(C.h2.data(), data(group(pre + "ff.w1")), C.u.data(), L, d, ff);
    add_bias(C.u.data(), data(group(pre + "ff.b1")), L, ff);
    for (std::size_t i = 0; i < L * ff; ++i) C.g[i] = gelu(C.u[i]);
    std::vector<T> f(L * d);
    ops.nn(C.g.data(), data(group(pre + "ff.w2")), f.data(), L, ff, d);
    add_bias(f.data(), data(group(pre + "ff.b2")), L, d);
    C.fmask.clear();
    if (drop && cfg_.residual_dropout) {
      make_mask(C.fmask, L * d, cfg_.dropout, rng);
      apply_mask(f.data(), C.fmask);
    }
    for (std::size_t i = 0; i < L * d; ++i) x[i] += f[i];
  }
  c.x_out = x;

  // Output head on suffix rows only.
  c.xhatf.resize(S * d);
  c.hf.resize(S * d);
  c.rstdf.resize(S);
  ln_forward(x.data() + P * d, data(group("final_ln.gain")), data(group("final_ln.bias")), c.xhatf.data(),
             c.hf.data(), c.rstdf.data(), S, d);
  c.logits.resize(S * V);
  ops.nn(c.hf.data(), data(group("out.weight")), c.logits.data(), S, d, V);
  add_bias(c.logits.data(), data(group("out.bias")), S, V);
}

template <typename T>
ForwardOutput<T> Model<T>::forward(const MaskedSample& s, const ForwardOptions& opt) const {
  Cache c;
  run(s, opt, c);
  ForwardOutput<T> out;
  out.length = c.L;
  out.prefix_len = c.P;
  out.vocab = static_cast<std::size_t>(cfg_.vocab.total_size());
  out.logits = std::move(c.logits);
  if (opt.keep_attention) {
    for (auto& layer : c.layers) out.attention.push_back(std::move(layer.p));
  }
  return out;
}

namespace {

// Cross-entropy of each attribute head against the target token; fills the
// logit gradient (softmax - onehot) scaled by `gscale` when `dlogits` is set.
template <typename T>
T token_loss(const Vocabulary& v, const T* logits, const CompoundToken& target, T* dlogits, T gscale) {
  const auto ids = v.ids(target);
  T total = 0;
  std::size_t off = 0;
  for (int a = 0; a < kNumAttributes; ++a) {
    const auto n = static_cast<std::size_t>(v.size(static_cast<Attribute>(a)));
    const T* z = logits + off;
    const T mx = *std::max_element(z, z + n);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    const auto t = static_cast<std::size_t>(ids[static_cast<std::size_t>(a)]);
    total += lse - z[t];
    if (dlogits) {
      for (std::size_t j = 0; j < n; ++j) dlogits[off + j] = gscale * std::exp(z[j] - lse);
      dlogits[off + t] -= gscale;
    }
    off += n;
  }
  return total;
}

}  // namespace

template <typename T>
T Model<T>::loss(const ForwardOutput<T>& out, const MaskedSample& s) const {
  const auto S = out.rows();
  if (S == 0 || s.suffix.empty()) {
    log().warn("sample has no suffix targets; loss is 0");
    return T(0);
  }
  T total = 0;
  for (std::size_t r = 0; r < S; ++r) {
    total += token_loss<T>(cfg_.vocab, out.logits.data() + r * out.vocab, s.suffix[r], nullptr, T(0));
  }
  return total / static_cast<T>(S);
}

template <typename T>
T Model<T>::loss_and_grad(const MaskedSample& s, std::vector<T>& grad, const ForwardOptions& opt,
                          T scale) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), T(0));
  Cache c;
  run(s, opt, c);
  const std::size_t S = c.L - c.P;
  if (S == 0) {
    log().warn("sample has no suffix targets; loss is 0");
    return T(0);
  }
  const auto V = static_cast<std::size_t>(cfg_.vocab.total_size());
  std::vector<T> dlogits(S * V);
  T total = 0;
  const T g = scale / static_cast<T>(S);
  for (std::size_t r = 0; r < S; ++r) {
    total += token_loss<T>(cfg_.vocab, c.logits.data() + r * V, s.suffix[r], dlogits.data() + r * V, g);
  }
  c.logits = std::move(dlogits);  // reuse as the logit gradient
  backward(c, grad);
  return total / static_cast<T>(S);
}

template <typename T>
void Model<T>::backward(Cache& c, std::vector<T>& grad) const {
  const Ops<T> ops{c.parallel};
  const std::size_t L = c.L, P = c.P, S = L - P;
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto F = static_cast<std::size_t>(cfg_.fused_width());
  const auto ff = static_cast<std::size_t>(cfg_.d_ff);
  const auto H = static_cast<std::size_t>(cfg_.heads);
  const auto dk = static_cast<std::size_t>(cfg_.head_dim());
  const auto V = static_cast<std::size_t>(cfg_.vocab.total_size());
  auto G = [&](const std::string& name) { return grad.data() + group(name).offset; };
  const T* dlogits = c.logits.data();

  // Output head.
  ops.tn(c.hf.data(), dlogits, G("out.weight"), S, d, V, true);
  bias_grad(dlogits, G("out.bias"), S, V);
  std::vector<T> dhf(S * d);
  ops.nt(dlogits, data(group("out.weight")), dhf.data(), S, V, d);
  std::vector<T> dx(L * d, T(0));
  ln_backward(dhf.data(), c.xhatf.data(), c.rstdf.data(), data(group("final_ln.gain")), G("final_ln.gain"),
              G("final_ln.bias"), dx.data() + P * d, S, d);

  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  std::vector<T> tmp(L * std::max(d, ff));
  std::vector<T> qh(L * dk), kh(L * dk), vh(L * dk), dah(L * dk), dqh(L * dk), dkh(L * dk), dvh(L * dk);
  std::vector<T> dp(L * L), pu(L * L);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const auto& C = c.layers[static_cast<std::size_t>(l)];
    const auto pre = "layer" + std::to_string(l) + ".";

    // Feed-forward sublayer: x = x_mid + drop(g W2 + b2).
    std::vector<T> df(dx);
    if (!C.fmask.empty()) apply_mask(df.data(), C.fmask);
    ops.tn(C.g.data(), df.data(), G(pre + "ff.w2"), L, ff, d, true);
    bias_grad(df.data(), G(pre + "ff.b2"), L, d);
    std::vector<T> du(L * ff);
    ops.nt(df.data(), data(group(pre + "ff.w2")), du.data(), L, d, ff);
    for (std::size_t i = 0; i < L * ff; ++i) du[i] *= gelu_grad(C.u[i]);
    ops.tn(C.h2.data(), du.data(), G(pre + "ff.w1"), L, d, ff, true);
    bias_grad(du.data(), G(pre + "ff.b1"), L, ff);
    std::vector<T> dh2(L * d);
    ops.nt(du.data(), data(group(pre + "ff.w1")), dh2.data(), L, ff, d);
    ln_backward(dh2.data(), C.xhat2.data(), C.rstd2.data(), data(group(pre + "ln2.gain")), G(pre + "ln2.gain"),
                G(pre + "ln2.bias"), dx.data(), L, d);

    // Attention sublayer: x_mid = x_in + drop(a Wo + bo).
    std::vector<T> dout(dx);
    if (!C.omask.empty()) apply_mask(dout.data(), C.omask);
    ops.tn(C.a.data(), dout.data(), G(pre + "attn.wo"), L, d, d, true);
    bias_grad(dout.data(), G(pre + "attn.bo"), L, d);
    std::vector<T> da(L * d);
    ops.nt(dout.data(), data(group(pre + "attn.wo")), da.data(), L, d, d);

    std::vector<T> dq(L * d), dkk(L * d), dv(L * d);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::copy_n(C.q.data() + i * d + h * dk, dk, qh.data() + i * dk);
        std::copy_n(C.k.data() + i * d + h * dk, dk, kh.data() + i * dk);
        std::copy_n(C.v.data() + i * d + h * dk, dk, vh.data() + i * dk);
        std::copy_n(da.data() + i * d + h * dk, dk, dah.data() + i * dk);
      }
      const T* ph = C.p.data() + h * L * L;
      const T* pm = C.pmask.empty() ? nullptr : C.pmask.data() + h * L * L;
      const T* pused = ph;
      if (pm) {
        for (std::size_t i = 0; i < L * L; ++i) pu[i] = ph[i] * pm[i];
        pused = pu.data();
      }
      ops.nt(dah.data(), vh.data(), dp.data(), L, dk, L);
      ops.tn(pused, dah.data(), dvh.data(), L, L, dk);
      if (pm) {
        for (std::size_t i = 0; i < L * L; ++i) dp[i] *= pm[i];
      }
      for (std::size_t i = 0; i < L; ++i) {
        T* row = dp.data() + i * L;
        const T* pr = ph + i * L;
        T dot = 0;
        for (std::size_t j = 0; j < L; ++j) dot += row[j] * pr[j];
        for (std::size_t j = 0; j < L; ++j) row[j] = pr[j] * (row[j] - dot) * scale;
      }
      ops.nn(dp.data(), kh.data(), dqh.data(), L, L, dk);
      ops.tn(dp.data(), qh.data(), dkh.data(), L, L, dk);
      for (std::size_t i = 0; i < L; ++i) {
        std::copy_n(dqh.data() + i * dk, dk, dq.data() + i * d + h * dk);
        std::copy_n(dkh.data() + i * dk, dk, dkk.data() + i * d + h * dk);
        std::copy_n(dvh.data() + i * dk, dk, dv.data() + i * d + h * dk);
      }
    }
    std::vector<T> dh1(L * d, T(0));
    const std::pair<const char*, const std::vector<T>*> proj[] = {{"q", &dq}, {"k", &dkk}, {"v", &dv}};
    for (const auto& [w, dg] : proj) {
      ops.tn(C.h1.data(), dg->data(), G(pre + "attn.w" + w), L, d, d, true);
      bias_grad(dg->data(), G(pre + "attn.b" + w), L, d);
      ops.nt(dg->data(), data(group(pre + "attn.w" + w)), dh1.data(), L, d, d, true);
    }
    ln_backward(dh1.data(), C.xhat1.data(), C.rstd1.data(), data(group(pre + "ln1.gain")), G(pre + "ln1.gain"),
                G(pre + "ln1.bias"), dx.data(), L, d);
  }

  // Input representation.
  if (!c.x0mask.empty()) apply_mask(dx.data(), c.x0mask);
  ops.tn(c.e.data(), dx.data(), G("fuse.weight"), L, F, d, true);
  bias_grad(dx.data(), G("fuse.bias"), L, d);
  std::vector<T> de(L * F);
  ops.nt(dx.data(), data(group("fuse.weight")), de.data(), L, d, F);
  T* tb = G("timing.bar");
  T* tp = G("timing.position");
  for (std::size_t i = 0; i < L; ++i) {
    const auto b = static_cast<std::size_t>(c.bar_ids[i]);
    const auto p = static_cast<std::size_t>(c.pos_ids[i]);
    for (std::size_t j = 0; j < d; ++j) {
      tb[b * d + j] += dx[i * d + j];
      tp[p * d + j] += dx[i * d + j];
    }
    std::size_t off = 0;
    for (int a = 0; a < kNumAttributes; ++a) {
      const auto& g = groups_[static_cast<std::size_t>(a)];
      T* row = grad.data() + g.offset + static_cast<std::size_t>(c.ids[i][static_cast<std::size_t>(a)]) * g.cols;
      for (std::size_t j = 0; j < g.cols; ++j) row[j] += de[i * F + off + j];
      off += g.cols;
    }
  }
}

template <typename T>
T Model<T>::batch_loss_and_grad(std::span<const MaskedSample> batch, std::vector<T>& grad,
                                const ForwardOptions& opt) const {
  grad.assign(params_.size(), T(0));
  if (batch.empty()) return T(0);
  const T scale = T(1) / static_cast<T>(batch.size());
  const std::size_t lanes = std::min(kLanes, batch.size());
  std::vector<std::vector<T>> lane_grad(lanes);
  std::vector<T> losses(batch.size(), T(0));
#pragma omp parallel for schedule(static, 1) if (opt.parallel)
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    lane_grad[lane].assign(params_.size(), T(0));
    for (std::size_t i = lane; i < batch.size(); i += lanes) {
      ForwardOptions o = opt;
      o.dropout_seed = derive_seed(opt.dropout_seed, i);
      losses[i] = loss_and_grad(batch[i], lane_grad[lane], o, scale);
    }
  }
  for (const auto& lg : lane_grad) {
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += lg[j];
  }
  T total = 0;
  for (T l : losses) total += l;
  return total * scale;
}

template struct ForwardOutput<float>;
template struct ForwardOutput<double>;
template class Model<float>;
template class Model<double>;

// ---------------------------------------------------------------- grad check

GradCheckReport gradient_check(const ModelConfig& cfg, const MaskedSample& sample, double h) {
  ModelConfig c = cfg;
  c.dropout = 0.0;
  Model<double> m(c);
  ForwardOptions opt;
  opt.parallel = false;
  std::vector<double> grad(m.params().size(), 0.0);
  m.loss_and_grad(sample, grad, opt);

  GradCheckReport rep;
  auto& p = m.params();
  for (const auto& g : m.groups()) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = g.offset; i < g.offset + g.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double lp = m.loss(m.forward(sample, opt), sample);
      p[i] = keep - h;
      const double lm = m.loss(m.forward(sample, opt), sample);
      p[i] = keep;
      const double num = (lp - lm) / (2 * h);
      diff += (grad[i] - num) * (grad[i] - num);
      na += grad[i] * grad[i];
      nn += num * num;
    }
    GradCheckGroup r{g.name, 0.0, std::sqrt(na), std::sqrt(nn)};
    // Key biases have an exactly zero gradient (softmax ignores a per-row
    // shift), so the floor keeps round-off from reading as a relative error.
    const double denom = std::max({r.analytic_norm, r.numeric_norm, kGradCheckFloor});
    r.relative_error = std::sqrt(diff) / denom;
    if (r.relative_error >= rep.max_relative_error) {
      rep.max_relative_error = r.relative_error;
      rep.worst_group = r.name;
    }
    rep.groups.push_back(std::move(r));
  }
  return rep;
}

}  // namespace melofill
