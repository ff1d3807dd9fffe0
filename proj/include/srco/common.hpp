#ifndef SRCO_COMMON_HPP_
#define SRCO_COMMON_HPP_

#include <charconv>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace srco {

// ============================================================================
//  Errors
// ============================================================================

enum class ErrorCode {
  // expression / parsing
  StackUnderflow,
  LeftoverOperands,
  UnknownToken,
  ContainsRawConstant,
  ArityMismatch,
  DimensionMismatch,
  AllSamplesNonFinite,
  // metrics
  LengthMismatch,
  NonFiniteInput,
  ZeroTargetVariance,
  NegativeInput,
  // datasets
  NonFiniteTarget,
  MissingTarget,
  NonNumericCell,
  EmptyFile,
  // corpus / prior
  CorpusTooSmall,
  EmptyCorpus,
  NonFiniteLoss,
  SequenceTooLong,
  VocabMismatch,
  VersionMismatch,
  CorruptCheckpoint,
  // search / fit
  DeadEnd,
  EmptyPool,
  AllRestartsNonFinite,
  NoFeasibleCandidate,
  // pipeline
  ConfigError,
  IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

// ============================================================================
//  Dense row-major matrix (shared by datasets, evaluation, and the prior)
// ============================================================================

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;  // row-major, rows*cols

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// ============================================================================
//  Hashing and seed derivation
// ============================================================================

// Named differently from the string overload on purpose: a string literal
// would otherwise prefer the (const void*, size_t) signature and hash garbage.
inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64_bytes(s.data(), s.size(), h);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stage seed = hash(global seed, stage name, item index). Stable across runs
// and platforms, so parallel work items can own independent streams.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view stage, uint64_t index = 0) {
  uint64_t h = fnv1a64(stage);
  h = splitmix64(h ^ splitmix64(global_seed));
  h = splitmix64(h ^ splitmix64(index ^ 0x5851f42d4c957f2dULL));
  return h;
}

// ============================================================================
//  Number formatting (shortest round-trip; artifact files must be
//  byte-stable across reruns)
// ============================================================================

inline std::string format_double(double x) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, bool* ok = nullptr) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  bool good = res.ec == std::errc{} && res.ptr == s.data() + s.size();
  if (ok) *ok = good;
  return x;
}

std::vector<std::string> split_ws(std::string_view line);

// ============================================================================
//  File helpers
// ============================================================================

// write-temp-then-rename; partial writes never clobber an existing artifact
void atomic_write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);
uint64_t file_checksum(const std::string& path);

}  // namespace srco

#endif  // SRCO_COMMON_HPP_
