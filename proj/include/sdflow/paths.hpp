#pragma once

#include "sdflow/common.hpp"

#include <cmath>
#include <cstdint>
#include <string>

namespace sdflow {

// ---------------------------------------------------------------------------
// Counter-based random numbers.
//
// Every Gaussian increment is a pure function of (seed, path, step, component),
// so regeneration is bit-exact under any parallel schedule and two solver runs
// sharing a seed consume identical noise (common random numbers).
// ---------------------------------------------------------------------------

namespace rng {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                                  std::uint64_t comp) {
  std::uint64_t h = mix64(seed ^ 0x2545f4914f6cdd1dULL);
  h = mix64(h ^ path);
  h = mix64(h ^ (step + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (comp + 0xd1342543de82ef95ULL));
  return h;
}

/// Uniform in (0,1), 53-bit mantissa, never exactly 0 or 1.
inline double uniform01(std::uint64_t h) {
  return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9 -- far under Monte Carlo resolution at any usable N).
double inverse_normal_cdf(double u);

inline double standard_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                              std::uint64_t comp) {
  return inverse_normal_cdf(uniform01(counter_hash(seed, path, step, comp)));
}

}  // namespace rng

// ---------------------------------------------------------------------------

/// Uniform grid t_start + k*dt, k = 0..steps.
struct TimeGrid {
  double t_start = 0.0;
  double t_end = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double t0, double t1, int m) : t_start(t0), t_end(t1), steps(m) {
    if (!(t1 > t0)) throw ArgumentError("TimeGrid: t_end must exceed t_start");
    if (m < 1) throw ArgumentError("TimeGrid: steps must be >= 1");
  }

  double dt() const { return (t_end - t_start) / steps; }
  double node(int k) const { return t_start + k * dt(); }
  double horizon() const { return t_end - t_start; }

  bool operator==(const TimeGrid& o) const {
    return t_start == o.t_start && t_end == o.t_end && steps == o.steps;
  }
};

/// Seeded ensemble of Brownian increments dW[i][k] ~ N(0, dt*I) in R^d.
///
/// Increments are generated on demand from the counter RNG; nothing is stored
/// unless the ensemble was loaded from a replay blob.
class BrownianEnsemble {
 public:
  BrownianEnsemble(std::uint64_t seed, int n_paths, int dim, TimeGrid grid);

  std::uint64_t seed() const { return seed_; }
  int n_paths() const { return n_paths_; }
  int dim() const { return dim_; }
  const TimeGrid& grid() const { return grid_; }

  /// Component c of dW for path i, step k.
  double increment(int path, int step, int comp) const {
    if (!data_.empty())
      return data_[(static_cast<std::size_t>(path) * grid_.steps + step) * dim_ + comp];
    return sqrt_dt_ * rng::standard_normal(seed_, static_cast<std::uint64_t>(path),
                                           static_cast<std::uint64_t>(step),
                                           static_cast<std::uint64_t>(comp));
  }

  void increment_vec(int path, int step, double* out) const {
    for (int c = 0; c < dim_; ++c) out[c] = increment(path, step, c);
  }

  /// Persist as a binary blob (header + row-major doubles); see README for layout.
  void save(const std::string& path) const;
  static BrownianEnsemble load(const std::string& path);

  /// Materializes all increments into memory (used by save/load round trips).
  void materialize();

 private:
  std::uint64_t seed_;
  int n_paths_;
  int dim_;
  TimeGrid grid_;
  double sqrt_dt_;
  std::vector<double> data_;  // empty => procedural
};

/// Running mean / variance / standard error accumulator (Welford).
struct RunningStats {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / (n - 1) : 0.0; }
  double std_error() const { return n > 0 ? std::sqrt(variance() / n) : 0.0; }
};

}  // namespace sdflow
