#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cstdint>
#include <memory>
#include <random>

#include "spde/mesh.hpp"

namespace spde {

/// splitmix64 step; used to derive per-stage and per-sample seeds from one
/// top-level seed.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

/// Deterministic standard-normal stream: mt19937_64 + Box-Muller.
class NormalRng {
public:
  explicit NormalRng(std::uint64_t seed);
  double operator()();
  Eigen::VectorXd vector(int n);

private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Sparse Cholesky factor P Q P^T = L L^T with an AMD fill-reducing
/// permutation. Deterministic given Q. Throws NotPositiveDefiniteError
/// (with the offending pivot index) when Q is not positive definite.
class CholeskyFactor {
public:
  explicit CholeskyFactor(const Eigen::SparseMatrix<double>& Q);

  int dimension() const { return dim_; }
  double log_det() const { return log_det_; }  // log det Q = 2 sum log L_ii

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;   // Q x = b
  Eigen::MatrixXd solve_dense(const Eigen::MatrixXd& B) const;
  Eigen::VectorXd half_solve(const Eigen::VectorXd& z) const;  // P^T L^{-T} z
  /// ||L^{-1} P e_i||^2 = (Q^{-1})_{ii} for a single index.
  double inverse_diagonal_entry(int i) const;

  Eigen::SparseMatrix<double> matrix_l() const;
  Eigen::VectorXi permutation() const;  // P as an index map

private:
  using Solver = Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                                      Eigen::AMDOrdering<int>>;
  std::shared_ptr<Solver> solver_;  // shared so factors can be copied cheaply
  int dim_ = 0;
  double log_det_ = 0.0;
};

CholeskyFactor factorize(const Eigen::SparseMatrix<double>& Q);

/// One draw from N(0, Q^{-1}): w = P^T L^{-T} z with z standard normal.
struct FieldSample {
  Eigen::VectorXd weights;  // 2n, stacked (w1, w2)
  std::shared_ptr<const TriangleMesh> mesh;  // when drawn on a known mesh
  std::uint64_t seed = 0;
};

FieldSample sample_field(const CholeskyFactor& factor, std::uint64_t seed,
                         std::shared_ptr<const TriangleMesh> mesh = nullptr);

/// Diagonal of Q^{-1}; intended for desk-scale problems.
Eigen::VectorXd marginal_variances(const Eigen::SparseMatrix<double>& Q);
Eigen::VectorXd marginal_variances(const CholeskyFactor& factor);

/// Per-vertex thickness t = notional + w1 + w2 (both fields are zero-mean
/// outward perturbations of the notional surfaces).
Eigen::VectorXd thickness_field(const FieldSample& sample, double notional_mm);

}  // namespace spde
