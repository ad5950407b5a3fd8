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
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "json.hpp"
#include "melofill/cli.hpp"
#include "melofill/corpus.hpp"
#include "melofill/hash.hpp"
#include "melofill/midi.hpp"

using namespace melofill;
using melofill::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Synthetic MIDI inputs, `bars` long; the last file is a duplicate.
void write_midis(const std::filesystem::path& dir, std::size_t n, int bars) {
  std::filesystem::create_directories(dir);
  const auto corpus = melofill::testing::fixture_corpus(n, 77, bars);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    write_midi_file((dir / ("song" + std::to_string(i) + ".mid")).string(), corpus[i]);
  }
  write_midi_file((dir / "dup.mid").string(), corpus[0]);
}

const char* kTinyConfig =
    "preset=tiny\n"
    "pretrain.steps=3\n"
    "pretrain.batch_size=2\n"
    "pretrain.warmup_steps=1\n"
    "finetune.steps=2\n"
    "finetune.batch_size=2\n"
    "finetune.segment_tokens=64\n"
    "infill.segment_tokens=64\n"
    "model.max_seq=64\n"
    "sample.max_new_tokens=40\n";

}  // namespace

TEST_CASE("run config: defaults, overrides and round trip") {
  RunConfig c;
  CHECK(c.model == ModelConfig::desk());
  CHECK(c.finetune.peak_lr == doctest::Approx(5e-5));
  c.apply("# comment\nseed=9\npreset=paper\nmodel.layers=3\nsample.top_k=5\ninfill.round_robin=true\n"
          "finetune.task=inpainting\nfinetune.max_transpose=2\n");
  CHECK(c.seed == 9);
  CHECK(c.model.d_model == 512);
  CHECK(c.model.layers == 3);
  CHECK(c.sampler.top_k == 5);
  CHECK(c.infill.round_robin);
  CHECK(c.finetune_task.max_transpose == 2);
  RunConfig back;
  back.apply(c.serialize());
  CHECK(back.serialize() == c.serialize());
  CHECK_THROWS_AS(c.apply("nonsense=1"), UsageError);
  CHECK_THROWS_AS(c.apply("model.layers"), UsageError);
  CHECK_THROWS_AS(c.apply("objective=unknown"), UsageError);
  CHECK_THROWS_AS(c.apply("sample.temperature=0"), UsageError);
  CHECK_FALSE(RunConfig().fixed_objective().has_value());
}

TEST_CASE("cli: usage errors exit 2") {
  TempDir tmp("cli-usage");
  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  CHECK(cli({"ingest", (tmp.path() / "missing").string(), (tmp.path() / "out").string()}).code == 2);
  CHECK(cli({"--preset", "huge", "ingest", "a", "b"}).code == 2);
  CHECK(cli({"pretrain", "--corpus", (tmp.path() / "none").string(), "--out", tmp.path().string()}).code == 2);
  CHECK(cli({"generate", "--checkpoint", (tmp.path() / "x.bin").string(), "--out", tmp.path().string()}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("cli: ingest, lexicon, pretrain, generate, finetune, inpaint, evaluate") {
  TempDir tmp("cli-e2e");
  const auto root = tmp.path();
  const auto cfg = root / "run.cfg";
  {
    std::ofstream(cfg) << kTinyConfig;
  }
  const std::vector<std::string> base = {"--config", cfg.string(), "--seed", "3"};
  auto with = [&](std::vector<std::string> tail) {
    auto v = base;
    v.insert(v.end(), tail.begin(), tail.end());
    return cli(v);
  };

  write_midis(root / "midi", 6, 12);
  auto r = with({"ingest", (root / "midi").string(), (root / "corpus").string()});
  REQUIRE(r.code == 0);
  const auto manifest = nlohmann::json::parse(slurp(root / "corpus" / "manifest.json"));
  CHECK(manifest["counts"]["pieces"] == 6);
  CHECK(manifest["counts"]["duplicates"] == 1);
  CHECK(manifest["seed"] == 3);

  SUBCASE("empty input accepts nothing") {
    std::filesystem::create_directories(root / "empty");
    CHECK(with({"ingest", (root / "empty").string(), (root / "c2").string()}).code == 1);
  }

  CHECK(with({"lexicon", (root / "corpus").string(), (root / "lex.txt").string(), "--top-ratio", "0"}).code == 2);
  REQUIRE(with({"lexicon", (root / "corpus").string(), (root / "lex.txt").string()}).code == 0);
  CHECK(slurp(root / "lex.txt").find(hex64(corpus_hash(root / "corpus"))) != std::string::npos);

  // n-gram objectives need a lexicon
  CHECK(with({"pretrain", "--corpus", (root / "corpus").string(), "--out", (root / "pt").string()}).code == 2);
  CHECK(with({"pretrain", "--corpus", (root / "corpus").string(), "--out", (root / "pt").string(),
              "--objective", "pitch_ngram"}).code == 2);
  r = with({"pretrain", "--corpus", (root / "corpus").string(), "--out", (root / "pt").string(), "--lexicon",
            (root / "lex.txt").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto ckpt = (root / "pt" / "final.bin").string();
  REQUIRE(std::filesystem::exists(ckpt));
  CHECK(nlohmann::json::parse(slurp(root / "pt" / "manifest.json"))["checkpoint_hash"] == hex64(hash_file(ckpt)));

  // a single fixed objective trains without a lexicon
  CHECK(with({"pretrain", "--corpus", (root / "corpus").string(), "--out", (root / "pt_long").string(),
              "--objective", "long_span", "--steps", "1"}).code == 0);

  // resuming continues from the stored step
  r = with({"pretrain", "--corpus", (root / "corpus").string(), "--out", (root / "pt2").string(), "--lexicon",
            (root / "lex.txt").string(), "--resume", ckpt, "--steps", "5"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("5 step(s)") != std::string::npos);

  for (const char* dir : {"gen_a", "gen_b"}) {
    r = with({"generate", "--checkpoint", ckpt, "--out", (root / dir).string(), "--count", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  for (const char* f : {"gen-000.mid", "gen-001.mid", "gen-000.tokens", "manifest.json"}) {
    CHECK(slurp(root / "gen_a" / f) == slurp(root / "gen_b" / f));
  }
  CHECK(with({"--seed", "4", "generate", "--checkpoint", ckpt, "--out", (root / "gen_c").string()}).code == 0);

  // continuation from a prompt file
  const auto prompt = root / "corpus";
  std::filesystem::path first_note;
  for (const auto& e : std::filesystem::recursive_directory_iterator(prompt)) {
    if (e.path().extension() == ".notes") first_note = e.path();
  }
  REQUIRE_FALSE(first_note.empty());
  r = with({"generate", "--checkpoint", ckpt, "--out", (root / "gen_p").string(), "--prompt", first_note.string(),
            "--prompt-bars", "4"});
  CHECK_MESSAGE(r.code == 0, r.err);

  // 12-bar pieces cannot host a 16-bar inpainting window
  CHECK(with({"finetune", "--checkpoint", ckpt, "--corpus", (root / "corpus").string(), "--task", "inpainting",
              "--out", (root / "ft_i").string()}).code == 2);
  CHECK(with({"inpaint", "--checkpoint", ckpt, "--corpus", (root / "corpus").string(), "--out",
              (root / "inp").string()}).code == 2);
  r = with({"finetune", "--checkpoint", ckpt, "--corpus", (root / "corpus").string(), "--task", "continuation",
            "--out", (root / "ft_c").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  write_midis(root / "midi_long", 3, 18);
  REQUIRE(with({"ingest", (root / "midi_long").string(), (root / "corpus_long").string()}).code == 0);
  r = with({"inpaint", "--checkpoint", ckpt, "--corpus", (root / "corpus_long").string(), "--out",
            (root / "inp").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::filesystem::exists(root / "inp" / "inpaint-002.mid"));
  CHECK(std::filesystem::exists(root / "inp" / "reference" / "inpaint-000.tokens"));

  r = with({"evaluate", "--reference", (root / "corpus").string(), "--run",
            "A:cont:" + (root / "gen_a").string(), "--run", "A:cont:" + (root / "gen_c").string(), "--run",
            "B:cont:" + (root / "gen_p").string(), "--out", (root / "eval").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto tsv = slurp(root / "eval" / "report.tsv");
  CHECK(tsv.find("TS") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(root / "eval" / "report.json"));
  CHECK(report.size() == 2);
  CHECK(with({"evaluate", "--reference", (root / "corpus").string(), "--run", "bad", "--out",
              (root / "eval2").string()}).code == 2);
}
