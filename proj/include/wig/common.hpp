#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace wig {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using TokenId = std::uint32_t;

// Bad input, bad configuration, or a violated precondition.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// The computation produced a non-finite value or failed to converge.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

/// Deterministic random source. The engine is mt19937_64, but uniform and
/// normal draws are computed here instead of through <random> distributions,
/// whose output is implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  /// Substream derived from a root seed and a stage name ("kmeans", "init",
  /// "shuffle", "sgns", ...).
  static Rng substream(std::uint64_t root_seed, std::string_view name);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Runs body(i) for i in [0, n) on up to `threads` workers using contiguous
/// blocks. Callers write results into per-index slots and reduce them
/// afterwards in index order, so output does not depend on scheduling.
template <class Body>
void parallel_for(std::size_t n, std::size_t threads, Body&& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = n * w / workers;
      const std::size_t hi = n * (w + 1) / workers;
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// 64-bit FNV-1a, used for content hashes in run manifests.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace wig
