#include "sdflow/paths.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace sdflow {

namespace rng {

double inverse_normal_cdf(double u) {
  // Acklam's rational approximation with tail branches.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;

  if (u < plow) {
    double q = std::sqrt(-2.0 * std::log(u));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (u > 1.0 - plow) {
    double q = std::sqrt(-2.0 * std::log(1.0 - u));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double q = u - 0.5;
  double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace rng

BrownianEnsemble::BrownianEnsemble(std::uint64_t seed, int n_paths, int dim, TimeGrid grid)
    : seed_(seed), n_paths_(n_paths), dim_(dim), grid_(grid), sqrt_dt_(std::sqrt(grid.dt())) {
  if (n_paths < 1) throw ArgumentError("BrownianEnsemble: n_paths must be >= 1");
  if (dim < 1) throw ArgumentError("BrownianEnsemble: dim must be >= 1");
}

void BrownianEnsemble::materialize() {
  if (!data_.empty()) return;
  data_.resize(static_cast<std::size_t>(n_paths_) * grid_.steps * dim_);
  std::size_t idx = 0;
  for (int i = 0; i < n_paths_; ++i)
    for (int k = 0; k < grid_.steps; ++k)
      for (int c = 0; c < dim_; ++c) data_[idx++] = increment(i, k, c);
}

namespace {
constexpr char kMagic[8] = {'S', 'D', 'F', 'B', 'R', 'W', 'N', '1'};
}

void BrownianEnsemble::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("BrownianEnsemble::save: cannot open " + path);
  out.write(kMagic, 8);
  std::int64_t header[3] = {static_cast<std::int64_t>(seed_), n_paths_, dim_};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  double tg[2] = {grid_.t_start, grid_.t_end};
  std::int64_t steps = grid_.steps;
  out.write(reinterpret_cast<const char*>(tg), sizeof(tg));
  out.write(reinterpret_cast<const char*>(&steps), sizeof(steps));
  // Row-major doubles: path, step, component.
  std::vector<double> row(static_cast<std::size_t>(grid_.steps) * dim_);
  for (int i = 0; i < n_paths_; ++i) {
    std::size_t idx = 0;
    for (int k = 0; k < grid_.steps; ++k)
      for (int c = 0; c < dim_; ++c) row[idx++] = increment(i, k, c);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
}

BrownianEnsemble BrownianEnsemble::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("BrownianEnsemble::load: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw ArgumentError("BrownianEnsemble::load: bad magic in " + path);
  std::int64_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  double tg[2];
  std::int64_t steps;
  in.read(reinterpret_cast<char*>(tg), sizeof(tg));
  in.read(reinterpret_cast<char*>(&steps), sizeof(steps));
  BrownianEnsemble e(static_cast<std::uint64_t>(header[0]), static_cast<int>(header[1]),
                     static_cast<int>(header[2]), TimeGrid(tg[0], tg[1], static_cast<int>(steps)));
  e.data_.resize(static_cast<std::size_t>(e.n_paths_) * e.grid_.steps * e.dim_);
  in.read(reinterpret_cast<char*>(e.data_.data()),
          static_cast<std::streamsize>(e.data_.size() * sizeof(double)));
  if (!in) throw ArgumentError("BrownianEnsemble::load: truncated blob " + path);
  return e;
}

}  // namespace sdflow
