#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sdflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised on invalid arguments (bad grids, mismatched dimensions, bad config values).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation fails numerically (non-contraction, blow-up, non-finite values).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box in R^d.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw ArgumentError("Box: lo/hi dimension mismatch");
    for (int i = 0; i < lo.size(); ++i)
      if (!(hi[i] > lo[i])) throw ArgumentError("Box: empty or inverted extent");
  }
  static Box cube(int dim, double a, double b) {
    return Box(Vec::Constant(dim, a), Vec::Constant(dim, b));
  }

  int dim() const { return static_cast<int>(lo.size()); }
  double volume() const { return (hi - lo).prod(); }
  bool contains(const Vec& x) const {
    for (int i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
  }
};

/// Runs fn(i) for i in [0, n) on `workers` threads, contiguous blocks per thread.
/// Callers own determinism: each index must write only its own output slot.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(nw);
  std::size_t chunk = (n + nw - 1) / nw;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < nw; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace sdflow
