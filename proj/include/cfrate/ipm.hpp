#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cfrate/neural.hpp"

namespace cfrate::ipm {

using nn::Matrix;

// m points of dimension H, one per row.
struct Sample {
  Matrix points;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

// Exact W1 between the uniform empirical measures on a and b. Sizes may differ: the
// quantile functions are integrated exactly, which equals the optimal transport cost.
double wasserstein1_1d(std::span<const double> a, std::span<const double> b);

struct W1Subgradient {
  double value = 0.0;
  std::vector<double> grad_a;  // d value / d a_i through the fixed optimal coupling
  std::vector<double> grad_b;
};

// As wasserstein1_1d, plus the subgradient of the sorted coupling (ties broken by index).
W1Subgradient wasserstein1_1d_subgradient(std::span<const double> a, std::span<const double> b);

// H x n_proj matrix of unit columns drawn uniformly from the sphere.
Matrix random_directions(Eigen::Index dim, int n_proj, std::uint64_t seed);

double sliced_wasserstein(const Sample& a, const Sample& b, const Matrix& directions);
double sliced_wasserstein(const Sample& a, const Sample& b, int n_proj, std::uint64_t seed);

// Tape op: sliced W1 between two groups of column vectors.
nn::Var sliced_w1(nn::Tape& tape, std::span<const nn::Var> group_a, std::span<const nn::Var> group_b,
                  const Matrix& directions);

struct IpmConfig {
  int n_proj = 50;
  std::uint64_t seed = 0;
};

// Sliced W1 when both groups hold at least two points, 0 otherwise.
double ipm_term(const Sample& phi_t0, const Sample& phi_t1, const IpmConfig& cfg);
// Tape version; nullopt when either group has fewer than two points.
std::optional<nn::Var> ipm_term(nn::Tape& tape, std::span<const nn::Var> phi_t0, std::span<const nn::Var> phi_t1,
                                const IpmConfig& cfg);

}  // namespace cfrate::ipm
