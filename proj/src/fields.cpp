#include "sdflow/fields.hpp"

#include "sdflow/paths.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace sdflow {

// ---------------------------------------------------------------------------
// DriftSpec / DiffusionSpec
// ---------------------------------------------------------------------------

DriftSpec DriftSpec::zero(int dim) {
  DriftSpec b;
  b.dim = dim;
  b.id = "zero";
  b.grad = [dim](double, const Vec&) { return Mat::Zero(dim, dim); };
  return b;
}

namespace {
double fd_step(double coord) { return 1e-5 * std::max(1.0, std::abs(coord)); }
}  // namespace

Mat DriftSpec::gradient(double t, const Vec& x) const {
  if (grad) return grad(t, x);
  if (!eval) return Mat::Zero(dim, dim);
  Mat g(dim, dim);
  Vec xp = x, xm = x;
  for (int j = 0; j < dim; ++j) {
    double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    g.col(j) = (eval(t, xp) - eval(t, xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

DiffusionSpec DiffusionSpec::identity(int dim, double scale) {
  DiffusionSpec s;
  s.dim = dim;
  s.constant_in_x = true;
  s.ellipticity_K = std::max(scale, 1.0 / scale);
  s.id = "identity";
  Mat m = Mat::Identity(dim, dim) * scale;
  s.eval = [m](double, const Vec&) { return m; };
  return s;
}

std::vector<Mat> DiffusionSpec::column_gradients(double t, const Vec& x) const {
  if (grad_cols) return grad_cols(t, x);
  std::vector<Mat> out(dim, Mat::Zero(dim, dim));
  if (constant_in_x) return out;
  Vec xp = x, xm = x;
  for (int j = 0; j < dim; ++j) {
    double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    Mat diff = (eval(t, xp) - eval(t, xm)) / (2.0 * h);
    for (int m = 0; m < dim; ++m) out[m].col(j) = diff.col(m);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return out;
}

double DiffusionSpec::ellipticity_violation(const Box& box, double t0, double t1, int samples,
                                            std::uint64_t seed) const {
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec x(dim);
    for (int c = 0; c < dim; ++c) {
      double u = rng::uniform01(rng::counter_hash(seed, s, 0, c));
      x[c] = box.lo[c] + u * (box.hi[c] - box.lo[c]);
    }
    double t = t0 + rng::uniform01(rng::counter_hash(seed, s, 1, 0)) * (t1 - t0);
    Eigen::JacobiSVD<Mat> svd(eval(t, x));
    double smax = svd.singularValues().maxCoeff();
    double smin = svd.singularValues().minCoeff();
    worst = std::max(worst, smax - ellipticity_K);
    worst = std::max(worst, 1.0 / ellipticity_K - smin);
  }
  return std::max(worst, 0.0);
}

// ---------------------------------------------------------------------------
// Mollifier
// ---------------------------------------------------------------------------

namespace {
double unit_bump_raw(double r2) { return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0; }

double sphere_surface(int dim) {
  // |S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)
  return 2.0 * std::pow(M_PI, dim / 2.0) / std::tgamma(dim / 2.0);
}
}  // namespace

double Mollifier::unit_bump_constant(int dim) {
  static std::map<int, double> cache;
  auto it = cache.find(dim);
  if (it != cache.end()) return it->second;
  // integral = |S^{d-1}| * int_0^1 r^{d-1} exp(-1/(1-r^2)) dr, midpoint rule.
  const int n = 2'000'000;
  double h = 1.0 / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double r = (i + 0.5) * h;
    acc += std::pow(r, dim - 1) * unit_bump_raw(r * r);
  }
  double integral = sphere_surface(dim) * acc * h;
  double c = 1.0 / integral;
  cache[dim] = c;
  return c;
}

Mollifier::Mollifier(int dim, int level) : dim_(dim), level_(level) {
  if (level < 1) throw ArgumentError("Mollifier: level must be >= 1");
  if (dim < 1) throw ArgumentError("Mollifier: dim must be >= 1");
  constant_ = unit_bump_constant(dim);
}

double Mollifier::operator()(const Vec& x) const {
  double r2 = (x * static_cast<double>(level_)).squaredNorm();
  return std::pow(static_cast<double>(level_), dim_) * constant_ * unit_bump_raw(r2);
}

// ---------------------------------------------------------------------------
// L^q_p norm
// ---------------------------------------------------------------------------

double lq_lp_norm(const std::function<double(double, const Vec&)>& f, double p, double q,
                  const Box& box, double t0, double t1, int nodes_per_axis, int time_nodes) {
  if (!std::isfinite(p) || !std::isfinite(q) || p <= 0 || q <= 0)
    throw ArgumentError("lq_lp_norm: p, q must be finite and positive");
  if (!(t1 > t0)) throw ArgumentError("lq_lp_norm: empty time interval");
  if (box.volume() <= 0.0) throw ArgumentError("lq_lp_norm: zero-volume box");
  int d = box.dim();
  std::vector<double> h(d);
  std::size_t n_cells = 1;
  for (int i = 0; i < d; ++i) {
    h[i] = (box.hi[i] - box.lo[i]) / nodes_per_axis;
    n_cells *= static_cast<std::size_t>(nodes_per_axis);
  }
  double cell = 1.0;
  for (int i = 0; i < d; ++i) cell *= h[i];
  double dt = (t1 - t0) / time_nodes;

  double time_acc = 0.0;
  Vec x(d);
  for (int kt = 0; kt < time_nodes; ++kt) {
    double t = t0 + (kt + 0.5) * dt;
    double space_acc = 0.0;
    for (std::size_t cidx = 0; cidx < n_cells; ++cidx) {
      std::size_t rem = cidx;
      for (int i = 0; i < d; ++i) {
        int k = static_cast<int>(rem % nodes_per_axis);
        rem /= nodes_per_axis;
        x[i] = box.lo[i] + (k + 0.5) * h[i];
      }
      double v = f(t, x);
      if (!std::isfinite(v)) throw NumericalError("lq_lp_norm: non-finite field value");
      space_acc += std::pow(std::abs(v), p) * cell;
    }
    time_acc += std::pow(space_acc, q / p) * dt;
  }
  return std::pow(time_acc, 1.0 / q);
}

double lq_lp_norm(const DriftSpec& f, const Box& box, double t0, double t1, int nodes_per_axis,
                  int time_nodes) {
  return lq_lp_norm([&f](double t, const Vec& x) { return f(t, x).norm(); }, f.p, f.q, box, t0,
                    t1, nodes_per_axis, time_nodes);
}

// ---------------------------------------------------------------------------
// Mollification
// ---------------------------------------------------------------------------

DriftSpec mollify(const DriftSpec& b, const Mollifier& m, int quad_nodes_per_axis) {
  if (m.dim() != b.dim) throw ArgumentError("mollify: dimension mismatch");
  int d = b.dim;
  int nq = quad_nodes_per_axis;
  double r = m.radius();
  double h = 2.0 * r / nq;

  // Precompute offsets and weights on the kernel support; renormalize to unit
  // mass so mass-1 and symmetry properties hold exactly at the discrete level.
  auto offsets = std::make_shared<std::vector<Vec>>();
  auto weights = std::make_shared<std::vector<double>>();
  std::size_t n_cells = 1;
  for (int i = 0; i < d; ++i) n_cells *= static_cast<std::size_t>(nq);
  double cell = std::pow(h, d);
  double total = 0.0;
  Vec y(d);
  for (std::size_t cidx = 0; cidx < n_cells; ++cidx) {
    std::size_t rem = cidx;
    for (int i = 0; i < d; ++i) {
      int k = static_cast<int>(rem % nq);
      rem /= nq;
      y[i] = -r + (k + 0.5) * h;
    }
    double w = m(y) * cell;
    if (w > 0.0) {
      offsets->push_back(y);
      weights->push_back(w);
      total += w;
    }
  }
  for (auto& w : *weights) w /= total;

  DriftSpec out;
  out.dim = d;
  out.p = b.p;
  out.q = b.q;
  out.id = b.id + "_mollified_n" + std::to_string(m.level());
  auto base = b.eval;
  int dim = d;
  out.eval = [base, offsets, weights, dim](double t, const Vec& x) {
    Vec acc = Vec::Zero(dim);
    if (!base) return acc;
    for (std::size_t j = 0; j < offsets->size(); ++j)
      acc += (*weights)[j] * base(t, x - (*offsets)[j]);
    return acc;
  };
  return out;
}

// ---------------------------------------------------------------------------
// SampledField
// ---------------------------------------------------------------------------

SampledField::SampledField(Box box, std::vector<int> shape, int comps)
    : box_(std::move(box)), shape_(std::move(shape)), comps_(comps) {
  if (static_cast<int>(shape_.size()) != box_.dim())
    throw ArgumentError("SampledField: shape rank != box dim");
  std::size_t n = 1;
  for (int s : shape_) {
    if (s < 2) throw ArgumentError("SampledField: need >= 2 nodes per axis");
    n *= static_cast<std::size_t>(s);
  }
  values_.assign(n * comps_, 0.0);
}

std::size_t SampledField::flat(const std::vector<int>& idx) const {
  std::size_t f = 0;
  for (std::size_t i = 0; i < shape_.size(); ++i) f = f * shape_[i] + idx[i];
  return f * comps_;
}

double& SampledField::node(const std::vector<int>& idx, int c) { return values_[flat(idx) + c]; }
double SampledField::node(const std::vector<int>& idx, int c) const {
  return values_[flat(idx) + c];
}

void SampledField::fill(const std::function<Vec(const Vec&)>& f) {
  int d = dim();
  std::vector<int> idx(d, 0);
  Vec x(d);
  std::size_t n_nodes = values_.size() / comps_;
  for (std::size_t flat_node = 0; flat_node < n_nodes; ++flat_node) {
    std::size_t rem = flat_node;
    for (int i = d - 1; i >= 0; --i) {
      idx[i] = static_cast<int>(rem % shape_[i]);
      rem /= shape_[i];
    }
    for (int i = 0; i < d; ++i)
      x[i] = box_.lo[i] + idx[i] * (box_.hi[i] - box_.lo[i]) / (shape_[i] - 1);
    Vec v = f(x);
    for (int c = 0; c < comps_; ++c) values_[flat_node * comps_ + c] = v[c];
  }
}

Vec SampledField::eval(const Vec& x) const {
  int d = dim();
  // Zero extension outside the box.
  for (int i = 0; i < d; ++i)
    if (x[i] < box_.lo[i] || x[i] > box_.hi[i]) return Vec::Zero(comps_);

  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int i = 0; i < d; ++i) {
    double s = (x[i] - box_.lo[i]) / (box_.hi[i] - box_.lo[i]) * (shape_[i] - 1);
    int k = std::min(static_cast<int>(s), shape_[i] - 2);
    base[i] = k;
    frac[i] = s - k;
  }
  Vec acc = Vec::Zero(comps_);
  int corners = 1 << d;
  std::vector<int> idx(d);
  for (int corner = 0; corner < corners; ++corner) {
    double w = 1.0;
    for (int i = 0; i < d; ++i) {
      int bit = (corner >> i) & 1;
      idx[i] = base[i] + bit;
      w *= bit ? frac[i] : 1.0 - frac[i];
    }
    if (w == 0.0) continue;
    std::size_t f = flat(idx);
    for (int c = 0; c < comps_; ++c) acc[c] += w * values_[f + c];
  }
  return acc;
}

DriftSpec SampledField::as_drift(double p, double q) const {
  if (comps_ != dim()) throw ArgumentError("SampledField::as_drift: comps != dim");
  DriftSpec b;
  b.dim = dim();
  b.p = p;
  b.q = q;
  b.id = "sampled";
  auto self = std::make_shared<SampledField>(*this);
  b.eval = [self](double, const Vec& x) { return self->eval(x); };
  return b;
}

void SampledField::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ArgumentError("SampledField::save_csv: cannot open " + path);
  out.precision(17);
  out << "# sdflow-grid-field v1\n";
  out << "dim," << dim() << "\ncomps," << comps_ << "\nshape";
  for (int s : shape_) out << "," << s;
  out << "\nlo";
  for (int i = 0; i < dim(); ++i) out << "," << box_.lo[i];
  out << "\nhi";
  for (int i = 0; i < dim(); ++i) out << "," << box_.hi[i];
  out << "\n";
  std::size_t n_nodes = values_.size() / comps_;
  for (std::size_t n = 0; n < n_nodes; ++n) {
    for (int c = 0; c < comps_; ++c) out << (c ? "," : "") << values_[n * comps_ + c];
    out << "\n";
  }
}

namespace {
std::vector<double> parse_csv_numbers(const std::string& line, const std::string& key) {
  std::vector<double> out;
  if (line.rfind(key + ",", 0) != 0)
    throw ArgumentError("SampledField: expected '" + key + "' line, got: " + line);
  std::stringstream ss(line.substr(key.size() + 1));
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}
}  // namespace

SampledField SampledField::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("SampledField::load_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);  // comment header
  std::getline(in, line);
  int dim = static_cast<int>(parse_csv_numbers(line, "dim")[0]);
  std::getline(in, line);
  int comps = static_cast<int>(parse_csv_numbers(line, "comps")[0]);
  std::getline(in, line);
  auto shape_d = parse_csv_numbers(line, "shape");
  std::getline(in, line);
  auto lo = parse_csv_numbers(line, "lo");
  std::getline(in, line);
  auto hi = parse_csv_numbers(line, "hi");
  if (static_cast<int>(shape_d.size()) != dim || static_cast<int>(lo.size()) != dim)
    throw ArgumentError("SampledField::load_csv: header rank mismatch");
  std::vector<int> shape(shape_d.begin(), shape_d.end());
  Vec vlo(dim), vhi(dim);
  for (int i = 0; i < dim; ++i) {
    vlo[i] = lo[i];
    vhi[i] = hi[i];
  }
  SampledField f(Box(vlo, vhi), shape, comps);
  for (std::size_t n = 0; n < f.values_.size() / comps; ++n) {
    if (!std::getline(in, line))
      throw ArgumentError("SampledField::load_csv: truncated data in " + path);
    std::stringstream ss(line);
    std::string tok;
    for (int c = 0; c < comps; ++c) {
      std::getline(ss, tok, ',');
      f.values_[n * comps + c] = std::stod(tok);
    }
  }
  return f;
}

namespace {
constexpr char kGridMagic[8] = {'S', 'D', 'F', 'G', 'R', 'I', 'D', '1'};
}

void SampledField::save_binary(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("SampledField::save_binary: cannot open " + path);
  out.write(kGridMagic, 8);
  std::int32_t d = dim(), c = comps_;
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(&c), 4);
  for (int s : shape_) {
    std::int32_t v = s;
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  out.write(reinterpret_cast<const char*>(box_.lo.data()), 8 * d);
  out.write(reinterpret_cast<const char*>(box_.hi.data()), 8 * d);
  out.write(reinterpret_cast<const char*>(values_.data()),
            static_cast<std::streamsize>(values_.size() * 8));
}

SampledField SampledField::load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("SampledField::load_binary: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kGridMagic, 8) != 0)
    throw ArgumentError("SampledField::load_binary: bad magic in " + path);
  std::int32_t d, c;
  in.read(reinterpret_cast<char*>(&d), 4);
  in.read(reinterpret_cast<char*>(&c), 4);
  std::vector<int> shape(d);
  for (int i = 0; i < d; ++i) {
    std::int32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    shape[i] = v;
  }
  Vec lo(d), hi(d);
  in.read(reinterpret_cast<char*>(lo.data()), 8 * d);
  in.read(reinterpret_cast<char*>(hi.data()), 8 * d);
  SampledField f(Box(lo, hi), shape, c);
  in.read(reinterpret_cast<char*>(f.values_.data()),
          static_cast<std::streamsize>(f.values_.size() * 8));
  if (!in) throw ArgumentError("SampledField::load_binary: truncated data in " + path);
  return f;
}

}  // namespace sdflow
