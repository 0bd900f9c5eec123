#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace ntp {

/// Runs body(i) for i in [0, count) on up to `threads` workers. The body must
/// write only to slot i of its outputs; callers reduce afterwards in index
/// order, which keeps results independent of scheduling.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Fixed-order pairwise summation.
double pairwise_sum(std::span<const double> values);

inline double pairwise_mean(std::span<const double> values) {
  return values.empty() ? 0.0 : pairwise_sum(values) / static_cast<double>(values.size());
}

/// A statistic with its Monte-Carlo standard error.
struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

/// Sample mean and standard error (sample sd / sqrt(count)).
Estimate mean_stderr(std::span<const double> values);

double median(std::vector<double> values);

}  // namespace ntp
