#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace mesde {

/// Resolves a worker count; 0 means "all hardware threads".
inline unsigned resolve_workers(unsigned workers) noexcept {
  if (workers != 0) return workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

/// Calls fn(i) for i in [0, count). Work is handed out dynamically, so callers
/// must write results by index to stay independent of scheduling. The
/// exception thrown for the lowest index is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  workers = std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(std::max<std::size_t>(count, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_index = count;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

namespace detail {
inline double pairwise(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise(v.first(half)) + pairwise(v.subspan(half));
}
} // namespace detail

/// Order-independent sum: terms are sorted and then added along a fixed
/// pairwise tree, so any permutation of the input gives the same bits.
inline double deterministic_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end(), [](double a, double b) {
    // Total order that also places NaNs deterministically.
    if (std::isnan(a)) return false;
    if (std::isnan(b)) return true;
    return a < b;
  });
  return detail::pairwise(terms);
}

/// Component-wise deterministic_sum over a list of equally shaped matrices.
template <class Matrix>
Matrix deterministic_sum(const std::vector<Matrix>& terms, Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  std::vector<double> column(terms.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (std::size_t k = 0; k < terms.size(); ++k) column[k] = terms[k](r, c);
      out(r, c) = deterministic_sum(column);
    }
  }
  return out;
}

} // namespace mesde
