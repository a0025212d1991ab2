#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace clinqa {

// ---- text helpers -----------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Collapses every run of whitespace to a single space (no leading/trailing).
std::string collapse_whitespace(std::string_view s);

/// Splits on whitespace runs; no empty tokens.
std::vector<std::string> split_words(std::string_view s);

/// Number of whitespace-delimited tokens.
std::size_t count_words(std::string_view s);

// ---- hashing / seed derivation -----------------------------------------

/// FNV-1a 64-bit. Stable across platforms; used for cache keys and digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

/// fnv1a64 rendered as 16 hex chars.
std::string fnv1a64_hex(std::string_view bytes);

/// Accumulates heterogeneous values into one 64-bit seed. Streams derived
/// from distinct (tag, id) tuples never collide in practice, which keeps
/// per-sentence RNG independent of scheduling order.
class SeedMixer {
 public:
  explicit SeedMixer(std::uint64_t seed);
  SeedMixer& mix(std::uint64_t v);
  SeedMixer& mix(std::string_view s);
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_;
};

// ---- deterministic randomness -------------------------------------------

/// Uniform draw in [0, n) via rejection sampling on the raw mt19937_64
/// stream. Unlike std::uniform_int_distribution this is bit-identical
/// across standard library implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

/// Fisher-Yates built on uniform_below, for reproducible shuffles.
template <typename T>
void deterministic_shuffle(std::vector<T>& values, std::mt19937_64& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(values[i - 1], values[j]);
  }
}

// ---- bounded parallel loop -------------------------------------------------

/// Runs fn(0..count-1) on up to `workers` threads. Indices are claimed from
/// an atomic counter, so every index runs exactly once; the first exception
/// is rethrown after all workers join. Callers needing deterministic output
/// must key results by index, never by completion order.
template <typename Fn>
void parallel_for_index(std::size_t count, int workers, Fn&& fn) {
  if (count == 0) return;
  const int spawn = std::max(1, std::min(workers, static_cast<int>(count)));
  if (spawn == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(spawn));
  for (int t = 0; t < spawn; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---- small file helpers --------------------------------------------------

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

}  // namespace clinqa
