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
#include "melofill/cli.hpp"

#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "melofill/corpus.hpp"
#include "melofill/evaluation.hpp"
#include "melofill/hash.hpp"
#include "melofill/log.hpp"
#include "melofill/midi.hpp"
#include "melofill/ngram.hpp"

namespace fs = std::filesystem;

namespace melofill {

namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw UsageError("expected a boolean, got " + v);
}

std::string prefixed(const std::string& prefix, const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) out += prefix + line + "\n";
  return out;
}

const char* task_name(FinetuneTask t) {
  return t == FinetuneTask::Continuation ? "continuation" : "inpainting";
}

FinetuneTask parse_task(const std::string& s) {
  if (s == "continuation") return FinetuneTask::Continuation;
  if (s == "inpainting" || s == "inpaint") return FinetuneTask::Inpainting;
  throw UsageError("unknown task " + s + " (continuation|inpainting)");
}

ModelConfig preset_model(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper") return ModelConfig::paper();
  if (name == "tiny") return ModelConfig::tiny();
  throw UsageError("unknown preset " + name + " (desk|paper|tiny)");
}

TrainConfig finetune_defaults() {
  TrainConfig t;
  t.steps = 1000;
  t.batch_size = 4;
  t.peak_lr = 5e-5;
  t.warmup_steps = 100;
  return t;
}

}  // namespace

RunConfig::RunConfig() : finetune(finetune_defaults()) {}

void RunConfig::apply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config: expected key=value, got " + line);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const auto key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    const auto dot = key.find('.');
    const auto group = dot == std::string::npos ? std::string() : key.substr(0, dot);
    const auto name = dot == std::string::npos ? key : key.substr(dot + 1);
    try {
      if (group.empty()) {
        if (name == "seed") seed = std::stoull(v);
        else if (name == "preset") {
          model = preset_model(v);
          preset = v;
        } else if (name == "objective") {
          if (v != "multitask" && !parse_objective(v)) throw UsageError("unknown objective " + v);
          objective = v;
        } else if (name == "n_max") n_max = std::stoi(v);
        else if (name == "top_ratio") top_ratio = std::stod(v);
        else if (name == "task") finetune_task.task = parse_task(v);
        else throw UsageError("config: unknown key " + key);
      } else if (group == "model") {
        model = ModelConfig::parse(model.serialize() + name + "=" + v + "\n");
      } else if (group == "pretrain") {
        pretrain = TrainConfig::parse(pretrain.serialize() + name + "=" + v + "\n");
      } else if (group == "finetune") {
        if (name == "task") finetune_task.task = parse_task(v);
        else if (name == "min_suffix") finetune_task.min_suffix = std::stod(v);
        else if (name == "max_suffix") finetune_task.max_suffix = std::stod(v);
        else if (name == "segment_tokens") finetune_task.segment_tokens = std::stoull(v);
        else if (name == "max_transpose") finetune_task.max_transpose = std::stoi(v);
        else finetune = TrainConfig::parse(finetune.serialize() + name + "=" + v + "\n");
      } else if (group == "infill") {
        if (name == "ngram_ratio") infill.ngram_ratio = std::stod(v);
        else if (name == "long_ratio") infill.long_ratio = std::stod(v);
        else if (name == "random_ratio") infill.random_ratio = std::stod(v);
        else if (name == "bar_ratio") infill.bar_ratio = std::stod(v);
        else if (name == "geometric_p") infill.geometric_p = std::stod(v);
        else if (name == "span_min") infill.span_min = std::stoi(v);
        else if (name == "span_max") infill.span_max = std::stoi(v);
        else if (name == "fallback_length") infill.fallback_length = std::stoi(v);
        else if (name == "segment_tokens") infill.segment_tokens = std::stoull(v);
        else if (name == "max_transpose") infill.max_transpose = std::stoi(v);
        else if (name == "round_robin") infill.round_robin = parse_bool(v);
        else throw UsageError("config: unknown key " + key);
      } else if (group == "sample") {
        if (name == "temperature") sampler.temperature = std::stod(v);
        else if (name == "top_k") sampler.top_k = std::stoi(v);
        else if (name == "max_new_tokens") sampler.max_new_tokens = std::stoull(v);
        else if (name == "bar_limit") sampler.bar_limit = std::stoi(v);
        else if (name == "max_resample") sampler.max_resample = std::stoi(v);
        else throw UsageError("config: unknown key " + key);
      } else {
        throw UsageError("config: unknown key " + key);
      }
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError("config: " + key + ": " + e.what());
    }
  }
  try {
    sampler.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::string RunConfig::serialize() const {
  std::ostringstream o;
  o << "seed=" << seed << '\n'
    << "preset=" << preset << '\n'
    << "objective=" << objective << '\n'
    << "task=" << task_name(finetune_task.task) << '\n'
    << "n_max=" << n_max << '\n'
    << "top_ratio=" << real(top_ratio) << '\n';
  o << prefixed("model.", model.serialize());
  o << prefixed("pretrain.", pretrain.serialize());
  o << prefixed("finetune.", finetune.serialize());
  o << "finetune.min_suffix=" << real(finetune_task.min_suffix) << '\n'
    << "finetune.max_suffix=" << real(finetune_task.max_suffix) << '\n'
    << "finetune.segment_tokens=" << finetune_task.segment_tokens << '\n'
    << "finetune.max_transpose=" << finetune_task.max_transpose << '\n';
  o << "infill.ngram_ratio=" << real(infill.ngram_ratio) << '\n'
    << "infill.long_ratio=" << real(infill.long_ratio) << '\n'
    << "infill.random_ratio=" << real(infill.random_ratio) << '\n'
    << "infill.bar_ratio=" << real(infill.bar_ratio) << '\n'
    << "infill.geometric_p=" << real(infill.geometric_p) << '\n'
    << "infill.span_min=" << infill.span_min << '\n'
    << "infill.span_max=" << infill.span_max << '\n'
    << "infill.fallback_length=" << infill.fallback_length << '\n'
    << "infill.segment_tokens=" << infill.segment_tokens << '\n'
    << "infill.max_transpose=" << infill.max_transpose << '\n'
    << "infill.round_robin=" << (infill.round_robin ? "true" : "false") << '\n';
  o << "sample.temperature=" << real(sampler.temperature) << '\n'
    << "sample.top_k=" << sampler.top_k << '\n'
    << "sample.max_new_tokens=" << sampler.max_new_tokens << '\n'
    << "sample.bar_limit=" << sampler.bar_limit << '\n'
    << "sample.max_resample=" << sampler.max_resample << '\n';
  return o.str();
}

std::optional<Objective> RunConfig::fixed_objective() const {
  if (objective == "multitask") return std::nullopt;
  return parse_objective(objective);
}

namespace {

using nlohmann::json;

void need_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}
void need_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

/// Deterministic manifest: no timestamps, keys sorted.
void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    const json& inputs, const json& extra) {
  json j;
  j["command"] = command;
  j["config"] = cfg.serialize();
  j["seed"] = cfg.seed;
  j["inputs"] = inputs;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

std::vector<Melody> load_pieces(const fs::path& dir) {
  need_dir(dir, "corpus");
  std::vector<fs::path> tokens;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".tokens") tokens.push_back(e.path());
  }
  if (tokens.empty()) return load_corpus(dir);
  std::sort(tokens.begin(), tokens.end());
  std::vector<Melody> out;
  for (const auto& p : tokens) out.push_back(decode(read_tokens_file(p.string())));
  return out;
}

std::vector<Melody> load_nonempty(const fs::path& dir) {
  auto c = load_pieces(dir);
  if (c.empty()) throw UsageError("no pieces in " + dir.string());
  return c;
}

TokenSequence load_prompt(const fs::path& p) {
  need_file(p, "prompt");
  const auto ext = p.extension().string();
  if (ext == ".tokens") return read_tokens_file(p.string());
  if (ext == ".notes") return encode(read_notes_file(p.string()));
  if (ext == ".mid" || ext == ".midi") {
    const auto m = extract_melody_track(read_midi_file(p.string()));
    if (!m) throw UsageError("no melody track in " + p.string());
    return encode(quantize(*m));
  }
  throw UsageError("prompt must be .tokens, .notes or .mid: " + p.string());
}

std::string piece_name(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%03zu", stem, i);
  return buf;
}

void write_piece(const fs::path& dir, const std::string& name, const TokenSequence& t) {
  write_tokens_file((dir / (name + ".tokens")).string(), t);
  write_midi_file((dir / (name + ".mid")).string(), decode(t));
}

// ---------------------------------------------------------------- commands

int cmd_ingest(const RunConfig& cfg, const fs::path& input, const fs::path& out, std::ostream& os) {
  need_dir(input, "input directory");
  fs::create_directories(out);
  const auto stats = build_corpus(input, out);
  json counts{{"inputs", stats.inputs},         {"pieces", stats.pieces},
              {"duplicates", stats.duplicates}, {"unreadable", stats.unreadable},
              {"no_melody", stats.no_melody},   {"rejected", stats.rejected}};
  for (int r = 0; r < 4; ++r) {
    counts[std::string("rejected_") + rule_name(static_cast<FilterRule>(r))] = stats.rejected_by_rule[static_cast<std::size_t>(r)];
  }
  write_manifest(out, "ingest", cfg, json{{"input_dir", input.string()}},
                 json{{"counts", counts}, {"corpus_hash", hex64(corpus_hash(out))}});
  os << "ingest: " << stats.pieces << " piece(s) accepted of " << stats.inputs << " file(s)\n";
  return stats.pieces > 0 ? 0 : 1;
}

int cmd_lexicon(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out, std::ostream& os) {
  if (!(cfg.top_ratio > 0.0 && cfg.top_ratio <= 1.0)) throw UsageError("top_ratio must be in (0, 1]");
  if (cfg.n_max < 3) throw UsageError("n_max must be >= 3");
  const auto corpus = load_nonempty(corpus_dir);
  const auto h = corpus_hash(corpus_dir);
  const auto lex = build_lexicon(corpus, cfg.n_max, cfg.top_ratio, h);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  lex.save(out.string());
  os << "lexicon: " << lex.entries().size() << " entries from " << corpus.size() << " piece(s)\n";
  return 0;
}

Lexicon load_lexicon_for(const RunConfig& cfg, const std::string& path) {
  const auto obj = cfg.fixed_objective();
  const bool needs = !obj || *obj == Objective::PitchNgram || *obj == Objective::RhythmNgram ||
                     *obj == Objective::CombinedNgram;
  if (path.empty()) {
    if (needs) throw UsageError("objective " + cfg.objective + " needs --lexicon");
    return {};
  }
  need_file(path, "lexicon");
  return Lexicon::load(path);
}

int run_training(Trainer& trainer, const BatchSource& source, const fs::path& out) {
  trainer.dump_dir = out / "dumps";
  std::ofstream log_file(out / "train.log", std::ios::app);
  try {
    trainer.run(source, &log_file, out / "checkpoints");
  } catch (const TrainingHalted& e) {
    throw std::runtime_error(std::string(e.what()) + "; batch dump " + e.dump_path());
  }
  trainer.save(out / "final.bin");
  return 0;
}

int cmd_pretrain(RunConfig cfg, const fs::path& corpus_dir, const std::string& lexicon,
                 const std::string& resume, std::optional<std::size_t> steps_override, const fs::path& out, std::ostream& os) {
  const auto corpus = load_nonempty(corpus_dir);
  const auto lex = load_lexicon_for(cfg, lexicon);
  fs::create_directories(out);
  cfg.model.seed = cfg.seed;
  cfg.pretrain.seed = cfg.seed;
  std::optional<Trainer> trainer;
  if (!resume.empty()) {
    need_file(resume, "checkpoint");
    trainer.emplace(Trainer::load(resume));
    if (steps_override) trainer->set_total_steps(*steps_override);
    cfg.model = trainer->model().config();
    cfg.pretrain = trainer->config();
  } else {
    trainer.emplace(cfg.model, cfg.pretrain);
  }
  const auto source = corpus_batches(corpus, lex.empty() ? nullptr : &lex, cfg.infill, cfg.fixed_objective(),
                                     cfg.pretrain.batch_size, derive_seed(cfg.seed, 0xba7c));
  run_training(*trainer, source, out);
  json inputs{{"corpus", corpus_dir.string()}, {"corpus_hash", hex64(corpus_hash(corpus_dir))}};
  if (!lexicon.empty()) inputs["lexicon_hash"] = hex64(hash_file(lexicon));
  if (!resume.empty()) inputs["resume_hash"] = hex64(hash_file(resume));
  write_manifest(out, "pretrain", cfg, inputs,
                 json{{"checkpoint", "final.bin"}, {"checkpoint_hash", hex64(hash_file(out / "final.bin"))},
                      {"steps", trainer->step()}, {"parameters", parameter_count(cfg.model)}});
  os << "pretrain: " << trainer->step() << " step(s), checkpoint " << (out / "final.bin").string() << "\n";
  return 0;
}

int cmd_finetune(RunConfig cfg, const fs::path& ckpt, const fs::path& corpus_dir, const fs::path& out,
                 std::ostream& os) {
  need_file(ckpt, "checkpoint");
  const auto corpus = load_nonempty(corpus_dir);
  if (cfg.finetune_task.task == FinetuneTask::Inpainting &&
      std::none_of(corpus.begin(), corpus.end(), [](const Melody& m) { return bar_count(m) >= kInpaintWindowBars; })) {
    throw UsageError("inpainting fine-tuning needs pieces of at least 16 bars; none in " + corpus_dir.string());
  }
  fs::create_directories(out);
  cfg.finetune.seed = cfg.seed;
  auto trainer = Trainer::from_weights(ckpt, cfg.finetune);
  cfg.model = trainer.model().config();
  const auto task = cfg.finetune_task;
  const auto batch = cfg.finetune.batch_size;
  const auto seed = derive_seed(cfg.seed, 0xf1e7);
  const std::vector<Melody> data = corpus;
  BatchSource source = [data, task, batch, seed](std::uint64_t step) {
    return make_finetune_batch(data, task, batch, seed, step);
  };
  run_training(trainer, source, out);
  write_manifest(out, "finetune", cfg,
                 json{{"corpus", corpus_dir.string()}, {"corpus_hash", hex64(corpus_hash(corpus_dir))},
                      {"pretrained_hash", hex64(hash_file(ckpt))}},
                 json{{"task", task_name(task.task)}, {"checkpoint", "final.bin"},
                      {"checkpoint_hash", hex64(hash_file(out / "final.bin"))}});
  os << "finetune: " << trainer.step() << " step(s) of " << task_name(task.task) << "\n";
  return 0;
}

int cmd_generate(const RunConfig& cfg, const fs::path& ckpt, const std::string& prompt_path,
                 std::optional<std::int32_t> prompt_bars, std::size_t count, const fs::path& out,
                 std::ostream& os) {
  need_file(ckpt, "checkpoint");
  TokenSequence prompt = prompt_path.empty() ? TokenSequence{} : load_prompt(prompt_path);
  if (prompt_bars && !prompt.empty()) {
    // keep the first `prompt_bars` bars of a longer prompt file
    auto m = decode(prompt);
    std::erase_if(m.notes, [&](const NoteEvent& n) { return n.bar() >= *prompt_bars; });
    prompt = encode(m);
  }
  const auto model = load_model(ckpt);
  fs::create_directories(out);
  std::vector<ContinuationResult> results(count);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(cfg.seed, 0x9e4, i));
    try {
      results[i] = continue_melody(model, prompt, cfg.sampler, rng, prompt_bars);
    } catch (const std::exception& e) {
#pragma omp critical
      error = e.what();
    }
  }
  if (!error.empty()) throw UsageError(error);
  json pieces = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const auto name = piece_name("gen", i);
    write_piece(out, name, results[i].tokens);
    pieces.push_back({{"name", name},
                      {"tokens", results[i].tokens.size()},
                      {"rejections", results[i].stats.rejections},
                      {"forced_stop", results[i].stats.forced_stop}});
  }
  json inputs{{"checkpoint_hash", hex64(hash_file(ckpt))}};
  if (!prompt_path.empty()) inputs["prompt_hash"] = hex64(hash_file(prompt_path));
  write_manifest(out, "generate", cfg, inputs, json{{"pieces", pieces}});
  os << "generate: " << count << " piece(s) in " << out.string() << "\n";
  return 0;
}

int cmd_inpaint(const RunConfig& cfg, const fs::path& ckpt, const fs::path& corpus_dir, std::size_t count,
                const fs::path& out, std::ostream& os) {
  need_file(ckpt, "checkpoint");
  const auto corpus = load_nonempty(corpus_dir);
  std::vector<const Melody*> eligible;
  for (const auto& m : corpus) {
    if (bar_count(m) >= kInpaintWindowBars) eligible.push_back(&m);
  }
  if (eligible.empty()) throw UsageError("no piece of at least 16 bars in " + corpus_dir.string());
  if (count == 0 || count > eligible.size()) count = eligible.size();
  const auto model = load_model(ckpt);
  fs::create_directories(out);
  std::vector<InpaintResult> results(count);
  std::vector<TokenSequence> originals(count);
  std::vector<std::int32_t> starts(count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(cfg.seed, 0x1a9, i));
    const auto& m = *eligible[i];
    starts[i] = static_cast<std::int32_t>(rng.uniform_int(0, bar_count(m) - kInpaintWindowBars));
    const auto parts = split_for_inpainting(m, starts[i]);
    results[i] = inpaint(model, parts.pre, parts.post, cfg.sampler, rng);
    Melody window;
    window.tempo_us = m.tempo_us;
    for (const auto& n : m.notes) {
      const auto rel = n.bar() - starts[i];
      if (rel >= 0 && rel < kInpaintWindowBars) {
        window.notes.push_back({n.pitch, n.onset - starts[i] * kTicksPerBar, n.duration});
      }
    }
    originals[i] = encode(window);
  }
  fs::create_directories(out / "reference");
  json pieces = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const auto name = piece_name("inpaint", i);
    write_piece(out, name, results[i].tokens);
    write_tokens_file((out / "reference" / (name + ".tokens")).string(), originals[i]);
    pieces.push_back({{"name", name},
                      {"window_start_bar", starts[i]},
                      {"empty_fill", results[i].empty_fill},
                      {"fill_tokens", results[i].fill.size()},
                      {"rejections", results[i].stats.rejections},
                      {"forced_stop", results[i].stats.forced_stop}});
  }
  write_manifest(out, "inpaint", cfg,
                 json{{"checkpoint_hash", hex64(hash_file(ckpt))}, {"corpus", corpus_dir.string()},
                      {"corpus_hash", hex64(corpus_hash(corpus_dir))}},
                 json{{"pieces", pieces}});
  os << "inpaint: " << count << " piece(s) in " << out.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const fs::path& reference, const std::vector<std::string>& runs,
                 const fs::path& out, std::ostream& os) {
  const auto ref = load_nonempty(reference);
  std::vector<RunSet> sets;
  json inputs{{"reference", reference.string()}};
  for (const auto& spec : runs) {
    // SETTING:TASK:DIR
    const auto a = spec.find(':');
    const auto b = a == std::string::npos ? a : spec.find(':', a + 1);
    if (b == std::string::npos) throw UsageError("--run expects SETTING:TASK:DIR, got " + spec);
    const auto setting = spec.substr(0, a), task = spec.substr(a + 1, b - a - 1);
    const fs::path dir = spec.substr(b + 1);
    const auto gen = load_nonempty(dir);
    auto it = std::find_if(sets.begin(), sets.end(), [&](const RunSet& r) { return r.setting == setting && r.task == task; });
    if (it == sets.end()) {
      sets.push_back({setting, task, {}});
      it = sets.end() - 1;
    }
    it->runs.push_back(evaluate(gen, ref));
    inputs["runs"].push_back({{"setting", setting}, {"task", task}, {"dir", dir.string()}});
  }
  if (sets.empty()) throw UsageError("evaluate needs at least one --run");
  const auto report = build_report(sets);
  fs::create_directories(out);
  write_text(out / "report.tsv", report.tsv());
  write_text(out / "report.json", report.json());
  write_manifest(out, "evaluate", cfg, inputs, json{{"reference_hash", hex64(corpus_hash(reference))}});
  os << report.tsv();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"melofill: melody infilling pre-training, fine-tuning, generation and evaluation"};
  app.require_subcommand(1, 1);
  std::string config_path, preset;
  std::optional<std::uint64_t> seed;
  const auto last = CLI::MultiOptionPolicy::TakeLast;
  app.add_option("--config", config_path, "key=value run configuration")->multi_option_policy(last);
  app.add_option("--seed", seed, "global seed")->multi_option_policy(last);
  app.add_option("--preset", preset, "model preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper", "tiny"}))
      ->multi_option_policy(last);

  std::string in_dir, out_path, corpus, lexicon, ckpt, resume, prompt, task, objective, reference;
  std::optional<int> n_max;
  std::optional<double> top_ratio;
  std::optional<std::size_t> steps;
  std::optional<std::int32_t> prompt_bars, bars;
  std::size_t count = 1, inpaint_count = 0;
  std::vector<std::string> runs;

  auto* ingest = app.add_subcommand("ingest", "MIDI directory -> filtered, deduplicated corpus");
  ingest->add_option("input", in_dir, "directory of .mid files")->required();
  ingest->add_option("out", out_path, "corpus directory")->required();

  auto* lex = app.add_subcommand("lexicon", "extract the melodic n-gram lexicon");
  lex->add_option("corpus", corpus)->required();
  lex->add_option("out", out_path, "lexicon file")->required();
  lex->add_option("--n-max", n_max);
  lex->add_option("--top-ratio", top_ratio);

  auto* pre = app.add_subcommand("pretrain", "blank-infilling pre-training");
  pre->add_option("--corpus", corpus)->required();
  pre->add_option("--out", out_path)->required();
  pre->add_option("--lexicon", lexicon);
  pre->add_option("--objective", objective, "multitask or a single objective");
  pre->add_option("--steps", steps);
  pre->add_option("--resume", resume, "checkpoint to continue from");

  auto* fine = app.add_subcommand("finetune", "fine-tune for continuation or inpainting");
  fine->add_option("--checkpoint", ckpt)->required();
  fine->add_option("--corpus", corpus)->required();
  fine->add_option("--out", out_path)->required();
  fine->add_option("--task", task, "continuation or inpainting");
  fine->add_option("--steps", steps);

  auto* gen = app.add_subcommand("generate", "melody continuation");
  gen->add_option("--checkpoint", ckpt)->required();
  gen->add_option("--out", out_path)->required();
  gen->add_option("--prompt", prompt, ".tokens, .notes or .mid prompt");
  gen->add_option("--prompt-bars", prompt_bars);
  gen->add_option("--bars", bars, "bar limit (default 32)");
  gen->add_option("--count", count);

  auto* inp = app.add_subcommand("inpaint", "fill the middle 4 bars of 16-bar windows");
  inp->add_option("--checkpoint", ckpt)->required();
  inp->add_option("--corpus", corpus)->required();
  inp->add_option("--out", out_path)->required();
  inp->add_option("--count", inpaint_count, "pieces to inpaint (0: all eligible)");

  auto* ev = app.add_subcommand("evaluate", "objective metrics and task scores");
  ev->add_option("--reference", reference)->required();
  ev->add_option("--run", runs, "SETTING:TASK:DIR, repeatable")->required();
  ev->add_option("--out", out_path)->required();

  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) sub->fallthrough();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "melofill: " << e.what() << "\n";
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      need_file(config_path, "config");
      std::ifstream in(config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg.apply(ss.str());
    }
    if (!preset.empty()) cfg.apply("preset=" + preset);
    if (seed) cfg.seed = *seed;
    if (n_max) cfg.n_max = *n_max;
    if (top_ratio) cfg.top_ratio = *top_ratio;
    if (!objective.empty()) cfg.apply("objective=" + objective);
    if (!task.empty()) cfg.apply("task=" + task);
    if (bars) cfg.apply("sample.bar_limit=" + std::to_string(*bars));
    if (steps) {
      cfg.pretrain.steps = *steps;
      cfg.finetune.steps = *steps;
    }

    if (*ingest) return cmd_ingest(cfg, in_dir, out_path, out);
    if (*lex) return cmd_lexicon(cfg, corpus, out_path, out);
    if (*pre) return cmd_pretrain(cfg, corpus, lexicon, resume, steps, out_path, out);
    if (*fine) return cmd_finetune(cfg, ckpt, corpus, out_path, out);
    if (*gen) return cmd_generate(cfg, ckpt, prompt, prompt_bars, count, out_path, out);
    if (*inp) return cmd_inpaint(cfg, ckpt, corpus, inpaint_count, out_path, out);
    if (*ev) return cmd_evaluate(cfg, reference, runs, out_path, out);
  } catch (const UsageError& e) {
    err << "melofill: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "melofill: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "melofill: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace melofill
