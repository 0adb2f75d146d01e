#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace dcnv4 {

// Worker count for data-parallel kernels: DCN_THREADS if set and positive,
// otherwise the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("DCN_THREADS")) {
    try {
      const long requested = std::stol(env);
      if (requested > 0) return static_cast<std::size_t>(requested);
    } catch (const std::exception&) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Splits [0, count) into contiguous chunks, one per worker, and calls
// body(begin, end) for each. Chunk boundaries never change what a given index
// computes, so results do not depend on the worker count.
template <class Body>
void parallel_for(std::size_t count, Body&& body, std::size_t workers = worker_count()) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    if (count > 0) body(std::size_t{0}, count);
    return;
  }
  const std::size_t step = (count + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t wkr = 0; wkr < workers; ++wkr) {
      const std::size_t begin = wkr * step;
      const std::size_t end = std::min(count, begin + step);
      if (begin >= end) break;
      pool.emplace_back([&, wkr, begin, end] {
        try {
          body(begin, end);
        } catch (...) {
          errors[wkr] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dcnv4
