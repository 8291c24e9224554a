#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stbem {

using Vec3 = Eigen::Vector3d;

enum class ErrorKind {
  invalid_argument,
  domain_error,
  parse_error,
  open_surface,
  orientation,
  degenerate_triangle,
  numeric,
  singular_block,
  dimension_mismatch,
  io
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::domain_error: return "domain-error";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::open_surface: return "open-surface-error";
    case ErrorKind::orientation: return "orientation-error";
    case ErrorKind::degenerate_triangle: return "degenerate-triangle-error";
    case ErrorKind::numeric: return "numeric-error";
    case ErrorKind::singular_block: return "singular-diagonal-block";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::io: return "io-error";
  }
  return "unknown-error";
}

/// Exception carrying a machine-checkable category next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

inline bool all_finite(const Vec3& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

// Worker-count knob shared by assembly and the studies. 0 means hardware
// parallelism.
inline std::atomic<unsigned>& worker_count_setting() {
  static std::atomic<unsigned> value{0};
  return value;
}

inline void set_worker_count(unsigned n) { worker_count_setting() = n; }

inline unsigned worker_count() {
  unsigned n = worker_count_setting();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs body(i) for i in [0, n). Items are handed out in contiguous chunks;
/// callers must make every item write a disjoint region so results do not
/// depend on the schedule.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const std::size_t chunk = std::max<std::size_t>(1, n / (8 * workers));
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= n || failed) return;
      const std::size_t end = std::min(n, begin + chunk);
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed = true;
        return;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace stbem
