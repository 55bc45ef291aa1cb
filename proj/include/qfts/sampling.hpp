// Copyright 2026 The QFTS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "qfts/error.hpp"

namespace qfts {

// Unbiased integer in [0, bound) via rejection sampling. std::uniform_int_distribution
// is implementation-defined, so sampled splits would not be reproducible across
// standard libraries; this is, given a fixed mt19937_64 stream.
inline std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound == 0) throw Error("bounded_rand: bound must be positive");
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % bound;
  std::uint64_t r = rng();
  while (r >= limit) r = rng();
  return r % bound;
}

// First k elements of a seeded Fisher-Yates shuffle over indices 0..n-1.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                               std::uint64_t seed) {
  if (k > n) throw DataError("sample size exceeds population size");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(bounded_rand(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

template <class T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, std::size_t k,
                                          std::uint64_t seed) {
  std::vector<T> out;
  out.reserve(k);
  for (std::size_t i : sample_indices(pool.size(), k, seed)) out.push_back(pool[i]);
  return out;
}

}  // namespace qfts
