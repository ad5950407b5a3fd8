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
#include "melofill/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdint>

namespace melofill::kernels {

namespace {

template <typename T>
inline void row_nn(const T* A, const T* B, T* C, std::size_t i, std::size_t K, std::size_t N,
                   bool acc) {
  T* c = C + i * N;
  if (!acc) std::fill(c, c + N, T(0));
  const T* a = A + i * K;
  for (std::size_t k = 0; k < K; ++k) {
    const T av = a[k];
    if (av == T(0)) continue;
    const T* b = B + k * N;
#pragma omp simd
    for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
  }
}

template <typename T>
inline void row_nt(const T* A, const T* B, T* C, std::size_t i, std::size_t K, std::size_t N,
                   bool acc) {
  const T* a = A + i * K;
  T* c = C + i * N;
  for (std::size_t j = 0; j < N; ++j) {
    const T* b = B + j * K;
    T s = 0;
#pragma omp simd reduction(+ : s)
    for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
    c[j] = acc ? c[j] + s : s;
  }
}

// Row k of C = A^T B.
template <typename T>
inline void row_tn(const T* A, const T* B, T* C, std::size_t k, std::size_t M, std::size_t K,
                   std::size_t N, bool acc) {
  T* c = C + k * N;
  if (!acc) std::fill(c, c + N, T(0));
  for (std::size_t m = 0; m < M; ++m) {
    const T av = A[m * K + k];
    if (av == T(0)) continue;
    const T* b = B + m * N;
#pragma omp simd
    for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
  }
}

}  // namespace

namespace serial {

template <typename T>
void matmul(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N, bool acc) {
  for (std::size_t i = 0; i < M; ++i) row_nn(A, B, C, i, K, N, acc);
}

template <typename T>
void matmul_nt(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool acc) {
  for (std::size_t i = 0; i < M; ++i) row_nt(A, B, C, i, K, N, acc);
}

template <typename T>
void matmul_tn(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool acc) {
  for (std::size_t k = 0; k < K; ++k) row_tn(A, B, C, k, M, K, N, acc);
}

}  // namespace serial

namespace parallel {

// Small products are not worth a fork.
constexpr std::size_t kMinWork = 1 << 15;

template <typename T>
void matmul(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N, bool acc) {
  const bool go = M * K * N >= kMinWork && !omp_in_parallel();
#pragma omp parallel for schedule(static) if (go)
  for (std::size_t i = 0; i < M; ++i) row_nn(A, B, C, i, K, N, acc);
}

template <typename T>
void matmul_nt(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool acc) {
  const bool go = M * K * N >= kMinWork && !omp_in_parallel();
#pragma omp parallel for schedule(static) if (go)
  for (std::size_t i = 0; i < M; ++i) row_nt(A, B, C, i, K, N, acc);
}

template <typename T>
void matmul_tn(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool acc) {
  const bool go = M * K * N >= kMinWork && !omp_in_parallel();
#pragma omp parallel for schedule(static) if (go)
  for (std::size_t k = 0; k < K; ++k) row_tn(A, B, C, k, M, K, N, acc);
}

}  // namespace parallel

#define MELOFILL_KERNELS(T)                                                                       \
  template void serial::matmul<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, \
                                  bool);                                                          \
  template void serial::matmul_nt<T>(const T*, const T*, T*, std::size_t, std::size_t,           \
                                     std::size_t, bool);                                          \
  template void serial::matmul_tn<T>(const T*, const T*, T*, std::size_t, std::size_t,           \
                                     std::size_t, bool);                                          \
  template void parallel::matmul<T>(const T*, const T*, T*, std::size_t, std::size_t,            \
                                    std::size_t, bool);                                           \
  template void parallel::matmul_nt<T>(const T*, const T*, T*, std::size_t, std::size_t,         \
                                       std::size_t, bool);                                        \
  template void parallel::matmul_tn<T>(const T*, const T*, T*, std::size_t, std::size_t,         \
                                       std::size_t, bool);

MELOFILL_KERNELS(float)
MELOFILL_KERNELS(double)

}  // namespace melofill::kernels
