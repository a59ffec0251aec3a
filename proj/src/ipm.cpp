#include "cfrate/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cfrate::ipm {

namespace {

std::vector<std::size_t> sorted_order(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  return idx;
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

void check_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("wasserstein: non-finite sample value");
  }
}

}  // namespace

W1Subgradient wasserstein1_1d_subgradient(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("wasserstein1_1d: empty sample");
  check_finite(a);
  check_finite(b);
  const auto ia = sorted_order(a);
  const auto ib = sorted_order(b);
  // Each point of a carries |b| mass units and each point of b carries |a|, so the
  // merge of the two quantile functions runs in exact integer arithmetic.
  const std::uint64_t m = a.size();
  const std::uint64_t n = b.size();
  W1Subgradient out;
  out.grad_a.assign(m, 0.0);
  out.grad_b.assign(n, 0.0);
  std::size_t i = 0, j = 0;
  std::uint64_t ra = n, rb = m;
  double total = 0.0;
  while (i < m && j < n) {
    const std::uint64_t w = std::min(ra, rb);
    const double diff = a[ia[i]] - b[ib[j]];
    const double wd = static_cast<double>(w);
    total += wd * std::abs(diff);
    out.grad_a[ia[i]] += wd * sign(diff);
    out.grad_b[ib[j]] -= wd * sign(diff);
    ra -= w;
    rb -= w;
    if (ra == 0) {
      ++i;
      ra = n;
    }
    if (rb == 0) {
      ++j;
      rb = m;
    }
  }
  const double mass = static_cast<double>(m) * static_cast<double>(n);
  out.value = total / mass;
  for (auto& g : out.grad_a) g /= mass;
  for (auto& g : out.grad_b) g /= mass;
  return out;
}

double wasserstein1_1d(std::span<const double> a, std::span<const double> b) {
  return wasserstein1_1d_subgradient(a, b).value;
}

Matrix random_directions(Eigen::Index dim, int n_proj, std::uint64_t seed) {
  if (dim < 1 || n_proj < 1) throw ValidationError("random_directions: dimension and projection count must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix dirs(dim, n_proj);
  for (int p = 0; p < n_proj; ++p) {
    double norm = 0.0;
    do {
      for (Eigen::Index k = 0; k < dim; ++k) dirs(k, p) = normal(rng);
      norm = dirs.col(p).norm();
    } while (norm < 1e-12);
    dirs.col(p) /= norm;
  }
  return dirs;
}

double sliced_wasserstein(const Sample& a, const Sample& b, const Matrix& directions) {
  if (a.size() == 0 || b.size() == 0) throw ValidationError("sliced_wasserstein: empty sample");
  if (a.dim() != b.dim()) {
    throw ShapeError("sliced_wasserstein: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
  if (directions.rows() != a.dim()) throw ShapeError("sliced_wasserstein: directions have the wrong dimension");
  const Matrix pa = a.points * directions;  // m x P
  const Matrix pb = b.points * directions;
  double total = 0.0;
  for (Eigen::Index p = 0; p < directions.cols(); ++p) {
    const Eigen::VectorXd ca = pa.col(p);
    const Eigen::VectorXd cb = pb.col(p);
    total += wasserstein1_1d({ca.data(), static_cast<std::size_t>(ca.size())},
                             {cb.data(), static_cast<std::size_t>(cb.size())});
  }
  return total / static_cast<double>(directions.cols());
}

double sliced_wasserstein(const Sample& a, const Sample& b, int n_proj, std::uint64_t seed) {
  if (a.dim() != b.dim()) {
    throw ShapeError("sliced_wasserstein: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
  return sliced_wasserstein(a, b, random_directions(a.dim(), n_proj, seed));
}

nn::Var sliced_w1(nn::Tape& tape, std::span<const nn::Var> group_a, std::span<const nn::Var> group_b,
                  const Matrix& directions) {
  if (group_a.empty() || group_b.empty()) throw ValidationError("sliced_w1: empty group");
  const Eigen::Index dim = directions.rows();
  const Eigen::Index n_proj = directions.cols();
  const auto stack = [&](std::span<const nn::Var> g) {
    Matrix pts(static_cast<Eigen::Index>(g.size()), dim);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Matrix& v = tape.value(g[i]);
      if (v.rows() != dim || v.cols() != 1) throw ShapeError("sliced_w1: points must be column vectors of the direction dimension");
      pts.row(static_cast<Eigen::Index>(i)) = v.col(0).transpose();
    }
    return pts;
  };
  const Matrix pa = stack(group_a) * directions;  // m x P
  const Matrix pb = stack(group_b) * directions;

  // Per-point, per-direction coefficients of the subgradient.
  Matrix coef_a(pa.rows(), n_proj);
  Matrix coef_b(pb.rows(), n_proj);
  double total = 0.0;
  for (Eigen::Index p = 0; p < n_proj; ++p) {
    const Eigen::VectorXd ca = pa.col(p);
    const Eigen::VectorXd cb = pb.col(p);
    auto r = wasserstein1_1d_subgradient({ca.data(), static_cast<std::size_t>(ca.size())},
                                         {cb.data(), static_cast<std::size_t>(cb.size())});
    total += r.value;
    coef_a.col(p) = Eigen::Map<const Eigen::VectorXd>(r.grad_a.data(), static_cast<Eigen::Index>(r.grad_a.size()));
    coef_b.col(p) = Eigen::Map<const Eigen::VectorXd>(r.grad_b.data(), static_cast<Eigen::Index>(r.grad_b.size()));
  }
  Matrix value(1, 1);
  value(0, 0) = total / static_cast<double>(n_proj);

  std::vector<nn::Var> inputs(group_a.begin(), group_a.end());
  inputs.insert(inputs.end(), group_b.begin(), group_b.end());
  const Eigen::Index m = pa.rows();
  return tape.custom(std::move(inputs), std::move(value),
                     [directions, coef_a, coef_b, m, n_proj](const Matrix& upstream) {
                       const double s = upstream(0, 0) / static_cast<double>(n_proj);
                       const Matrix ga = directions * coef_a.transpose() * s;  // H x m
                       const Matrix gb = directions * coef_b.transpose() * s;
                       std::vector<Matrix> grads;
                       grads.reserve(static_cast<std::size_t>(ga.cols() + gb.cols()));
                       for (Eigen::Index i = 0; i < m; ++i) grads.emplace_back(ga.col(i));
                       for (Eigen::Index j = 0; j < gb.cols(); ++j) grads.emplace_back(gb.col(j));
                       return grads;
                     });
}

double ipm_term(const Sample& phi_t0, const Sample& phi_t1, const IpmConfig& cfg) {
  if (phi_t0.size() < 2 || phi_t1.size() < 2) return 0.0;
  return sliced_wasserstein(phi_t0, phi_t1, cfg.n_proj, cfg.seed);
}

std::optional<nn::Var> ipm_term(nn::Tape& tape, std::span<const nn::Var> phi_t0, std::span<const nn::Var> phi_t1,
                                const IpmConfig& cfg) {
  if (phi_t0.size() < 2 || phi_t1.size() < 2) return std::nullopt;
  const Eigen::Index dim = tape.value(phi_t0.front()).rows();
  return sliced_w1(tape, phi_t0, phi_t1, random_directions(dim, cfg.n_proj, cfg.seed));
}

}  // namespace cfrate::ipm
