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

#include <cstddef>

namespace melofill::kernels {

// Row-major dense products. `accumulate` adds into C instead of overwriting.
// Both namespaces share the per-row arithmetic, so their results are
// bit-identical; `parallel` splits output rows across OpenMP threads and
// runs serially when already inside a parallel region.

namespace serial {

/// C[M,N] = A[M,K] * B[K,N]
template <typename T>
void matmul(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
            bool accumulate = false);
/// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool accumulate = false);
/// C[K,N] = A[M,K]^T * B[M,N]
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool accumulate = false);

}  // namespace serial

namespace parallel {

template <typename T>
void matmul(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
            bool accumulate = false);
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool accumulate = false);
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N,
               bool accumulate = false);

}  // namespace parallel

}  // namespace melofill::kernels
