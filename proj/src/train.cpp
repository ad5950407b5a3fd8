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
#include "melofill/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "melofill/hash.hpp"
#include "melofill/log.hpp"

namespace melofill {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string& s) {
    u64(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void floats(const std::vector<float>& v) {
    u64(v.size());
    for (float f : v) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u32(u);
    }
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string path) : b_(b), path_(std::move(path)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[at_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[at_++]) << (8 * i);
    return v;
  }
  std::string text() {
    const auto n = u64();
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(at_),
                  b_.begin() + static_cast<std::ptrdiff_t>(at_ + n));
    at_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t expect) {
    const auto n = u64();
    if (n != expect) fail("tensor has " + std::to_string(n) + " values, expected " + std::to_string(expect));
    std::vector<float> v(n);
    for (auto& f : v) {
      const auto u = u32();
      std::memcpy(&f, &u, 4);
    }
    return v;
  }
  std::size_t at() const { return at_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("checkpoint " + path_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (at_ + n > b_.size()) fail("truncated");
  }
  const std::vector<std::uint8_t>& b_;
  std::string path_;
  std::size_t at_ = 0;
};

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t step = 0;
  std::string rng;
  std::vector<float> params, m, v;
};

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes, path.string());
  if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) r.fail("bad magic");
  StableHash h;
  h.update(std::span(bytes.data(), bytes.size() - 8));
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  if (stored != h.digest()) r.fail("checksum mismatch");

  for (int i = 0; i < 2; ++i) r.u32();  // magic
  const auto version = r.u32();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  c.model = ModelConfig::parse(r.text());
  c.train = TrainConfig::parse(r.text());
  c.step = r.u64();
  c.rng = r.text();
  const auto n = parameter_count(c.model);
  c.params = r.floats(n);
  c.m = r.floats(n);
  c.v = r.floats(n);
  if (r.at() + 8 != bytes.size()) r.fail("trailing bytes");
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  need(batch_size >= 1, "batch_size must be >= 1");
  need(peak_lr >= 0, "peak_lr must be >= 0");
  need(beta1 >= 0 && beta1 < 1, "beta1 must be in [0, 1)");
  need(beta2 >= 0 && beta2 < 1, "beta2 must be in [0, 1)");
  need(eps > 0, "eps must be > 0");
  need(weight_decay >= 0, "weight_decay must be >= 0");
  need(grad_clip >= 0, "grad_clip must be >= 0");
  need(schedule_steps == 0 || schedule_steps >= warmup_steps,
       "schedule_steps must be >= warmup_steps");
}

std::string TrainConfig::serialize() const {
  std::ostringstream o;
  o << "steps=" << steps << '\n'
    << "batch_size=" << batch_size << '\n'
    << "peak_lr=" << real(peak_lr) << '\n'
    << "warmup_steps=" << warmup_steps << '\n'
    << "schedule_steps=" << schedule_steps << '\n'
    << "beta1=" << real(beta1) << '\n'
    << "beta2=" << real(beta2) << '\n'
    << "eps=" << real(eps) << '\n'
    << "weight_decay=" << real(weight_decay) << '\n'
    << "grad_clip=" << real(grad_clip) << '\n'
    << "checkpoint_every=" << checkpoint_every << '\n'
    << "log_every=" << log_every << '\n'
    << "train_seed=" << seed << '\n';
  return o.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("train config: bad line " + line);
    const auto key = line.substr(0, eq), v = line.substr(eq + 1);
    if (key == "steps") c.steps = std::stoull(v);
    else if (key == "batch_size") c.batch_size = std::stoull(v);
    else if (key == "peak_lr") c.peak_lr = std::stod(v);
    else if (key == "warmup_steps") c.warmup_steps = std::stoull(v);
    else if (key == "schedule_steps") c.schedule_steps = std::stoull(v);
    else if (key == "beta1") c.beta1 = std::stod(v);
    else if (key == "beta2") c.beta2 = std::stod(v);
    else if (key == "eps") c.eps = std::stod(v);
    else if (key == "weight_decay") c.weight_decay = std::stod(v);
    else if (key == "grad_clip") c.grad_clip = std::stod(v);
    else if (key == "checkpoint_every") c.checkpoint_every = std::stoull(v);
    else if (key == "log_every") c.log_every = std::stoull(v);
    else if (key == "train_seed") c.seed = std::stoull(v);
    else throw std::invalid_argument("train config: unknown key " + key);
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  const auto total = cfg.schedule_steps ? cfg.schedule_steps : cfg.steps;
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= total) return 0.0;
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(total - cfg.warmup_steps);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(const TrainConfig& cfg, std::size_t n)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), wd_(cfg.weight_decay),
      m_(n, 0.0f), v_(n, 0.0f) {}

void AdamW::update(std::vector<float>& params, const std::vector<float>& grad,
                   const std::vector<ParamGroup>& groups, double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  for (const auto& g : groups) {
    const auto decay = g.decay ? static_cast<float>(1.0 - lr * wd_) : 1.0f;
#pragma omp parallel for schedule(static) if (g.size() > 65536)
    for (std::size_t i = g.offset; i < g.offset + g.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0f - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0f - b2) * grad[i] * grad[i];
      const double mh = m_[i] / c1, vh = v_[i] / c2;
      params[i] = static_cast<float>(params[i] * decay - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

double clip_grad_norm(std::vector<float>& grad, double max_norm) {
  double sq = 0;
  for (float g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& g : grad) g *= s;
  }
  return norm;
}

BatchSource corpus_batches(std::span<const Melody> corpus, const Lexicon* lex,
                           const InfillConfig& infill, std::optional<Objective> objective,
                           std::size_t batch_size, std::uint64_t seed) {
  return [corpus, lex, infill, objective, batch_size, seed](std::uint64_t step) {
    BatchRequest req;
    req.objective = objective;
    req.batch_size = batch_size;
    req.seed = seed;
    req.batch_id = step;
    return make_training_batch(corpus, req, lex, infill);
  };
}

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg)
    : model_cfg_(model_cfg), cfg_(cfg), model_(model_cfg), opt_(cfg, model_.params().size()),
      rng_(derive_seed(cfg.seed, 0x7a)) {
  cfg_.validate();
}

StepResult Trainer::train_step(const std::vector<MaskedSample>& batch) {
  StepResult r;
  r.lr = learning_rate(cfg_, opt_.step());
  ForwardOptions fo;
  fo.train = true;
  fo.dropout_seed = rng_.next_u64();
  const float loss = model_.batch_loss_and_grad(batch, grad_, fo);
  r.loss = loss;
  r.grad_norm = clip_grad_norm(grad_, cfg_.grad_clip);
  if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm)) {
    std::string dump;
    if (!dump_dir.empty()) {
      std::filesystem::create_directories(dump_dir);
      const auto p = dump_dir / ("nonfinite-step" + std::to_string(opt_.step()) + ".txt");
      std::ofstream out(p);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        out << "# sample " << i << "\n" << dump_sample(batch[i]);
      }
      dump = p.string();
    }
    log().error("non-finite loss at step {} (loss {}, grad norm {}); batch dump: {}", opt_.step(),
                r.loss, r.grad_norm, dump.empty() ? "none" : dump);
    throw TrainingHalted("non-finite loss at step " + std::to_string(opt_.step()), dump);
  }
  opt_.update(model_.params(), grad_, model_.groups(), r.lr);
  r.step = opt_.step();
  return r;
}

StepResult Trainer::run(const BatchSource& source, std::ostream* log_out,
                        const std::filesystem::path& checkpoint_dir) {
  StepResult last;
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
  while (opt_.step() < cfg_.steps) {
    last = train_step(source(opt_.step()));
    if (log_out && (cfg_.log_every <= 1 || last.step % cfg_.log_every == 0 || last.step == cfg_.steps)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%zu %.9g %.9g\n", last.step, last.lr, last.loss);
      *log_out << buf << std::flush;
    }
    if (!checkpoint_dir.empty() && cfg_.checkpoint_every && last.step % cfg_.checkpoint_every == 0) {
      save(checkpoint_dir / ("ckpt-" + std::to_string(last.step) + ".bin"));
    }
  }
  return last;
}

void Trainer::set_total_steps(std::size_t steps) {
  if (steps < step()) {
    throw std::invalid_argument("total steps " + std::to_string(steps) + " is behind step " +
                                std::to_string(step()));
  }
  cfg_.steps = steps;
}

void Trainer::save(const std::filesystem::path& path) const {
  Writer w;
  w.bytes.insert(w.bytes.end(), kMagic, kMagic + 8);
  w.u32(kVersion);
  w.text(model_cfg_.serialize());
  w.text(cfg_.serialize());
  w.u64(opt_.step());
  w.text(rng_.state());
  w.floats(model_.params());
  w.floats(opt_.m());
  w.floats(opt_.v());
  StableHash h;
  h.update(w.bytes);
  w.u64(h.digest());

  // Write then rename so a crash never leaves a half-written checkpoint.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Trainer Trainer::load(const std::filesystem::path& path) {
  auto c = read_checkpoint(path);
  Trainer t(c.model, c.train);
  t.model_.params() = std::move(c.params);
  t.opt_.m() = std::move(c.m);
  t.opt_.v() = std::move(c.v);
  t.opt_.set_step(c.step);
  t.rng_.set_state(c.rng);
  return t;
}

Trainer Trainer::from_weights(const std::filesystem::path& path, const TrainConfig& cfg) {
  auto c = read_checkpoint(path);
  Trainer t(c.model, cfg);
  t.model_.params() = std::move(c.params);
  return t;
}

Model<float> load_model(const std::filesystem::path& checkpoint) {
  auto c = read_checkpoint(checkpoint);
  Model<float> m(c.model);
  m.params() = std::move(c.params);
  return m;
}

}  // namespace melofill
