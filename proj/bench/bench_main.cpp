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
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fixtures.hpp"
#include "melofill/infilling.hpp"
#include "melofill/kernels.hpp"
#include "melofill/model.hpp"

using namespace melofill;

namespace {

std::vector<float> random_matrix(std::size_t n, unsigned seed) {
  std::mt19937 g(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(g);
  return v;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto A = random_matrix(n * n, 1), B = random_matrix(n * n, 2);
  std::vector<float> C(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::matmul(A.data(), B.data(), C.data(), n, n, n);
    } else {
      kernels::serial::matmul(A.data(), B.data(), C.data(), n, n, n);
    }
    benchmark::DoNotOptimize(C.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <bool Parallel>
void BM_batch_gradient(benchmark::State& state) {
  const auto corpus = testing::fixture_corpus(16, 3);
  BatchRequest req;
  req.objective = Objective::LongSpan;
  req.batch_size = static_cast<std::size_t>(state.range(0));
  const auto batch = make_training_batch(corpus, req, nullptr, InfillConfig{});
  const Model<float> model(ModelConfig::desk());
  std::vector<float> grad;
  ForwardOptions opt{true, 1, false, Parallel};
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.batch_loss_and_grad(batch, grad, opt));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch.size()));
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_batch_gradient<false>)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_batch_gradient<true>)->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
