#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace trasend {

// Error taxonomy. CLI maps these onto exit codes, so keep the hierarchy flat
// and the categories disjoint.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/operand shapes do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration value or combination (detected at construction).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (files, recordings, labels).
struct DataError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Operation requires state that has not been populated yet.
struct StateError : Error {
  using Error::Error;
};

// File-format problems: bad magic, version mismatch, truncation.
struct IoError : Error {
  using Error::Error;
};

// API misuse: preconditions that callers must uphold.
struct ContractError : Error {
  using Error::Error;
};

enum class RunMode { train, eval };

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a run seed. `stream` labels the
// purpose (init, shuffle, dropout, ...), `index` the instance within it.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ (stream * 0x9e3779b97f4a7c15ULL)) ^ index);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream, uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, stream, index));
}

}  // namespace trasend
