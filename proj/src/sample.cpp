#include "spde/sample.hpp"

#include <cmath>
#include <stdexcept>

#include "spde/errors.hpp"

namespace spde {

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

NormalRng::NormalRng(std::uint64_t seed) : gen_(seed) {}

double NormalRng::operator()() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller on uniforms in (0, 1].
  const double inv = 1.0 / static_cast<double>(std::mt19937_64::max());
  double u1 = 0.0;
  do {
    u1 = static_cast<double>(gen_()) * inv;
  } while (u1 <= 0.0);
  const double u2 = static_cast<double>(gen_()) * inv;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = r * std::sin(angle);
  have_spare_ = true;
  return r * std::cos(angle);
}

Eigen::VectorXd NormalRng::vector(int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = (*this)();
  return v;
}

CholeskyFactor::CholeskyFactor(const Eigen::SparseMatrix<double>& Q) {
  if (Q.rows() != Q.cols()) throw std::invalid_argument("factorize: matrix must be square");
  dim_ = static_cast<int>(Q.rows());
  solver_ = std::make_shared<Solver>();
  solver_->compute(Q);
  const Eigen::SparseMatrix<double> L = solver_->matrixL();
  const Eigen::VectorXd diag = L.diagonal();
  if (solver_->info() != Eigen::Success) {
    int pivot = dim_ - 1;
    for (int i = 0; i < diag.size(); ++i)
      if (!(diag[i] > 0.0) || !std::isfinite(diag[i])) {
        pivot = i;
        break;
      }
    throw NotPositiveDefiniteError(
        "factorize: matrix is not positive definite (pivot " + std::to_string(pivot) + ")", pivot);
  }
  log_det_ = 2.0 * diag.array().log().sum();
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
  return solver_->solve(b);
}

Eigen::MatrixXd CholeskyFactor::solve_dense(const Eigen::MatrixXd& B) const {
  return solver_->solve(B);
}

Eigen::VectorXd CholeskyFactor::half_solve(const Eigen::VectorXd& z) const {
  Eigen::VectorXd v = solver_->matrixU().solve(z);  // L^T v = z
  return solver_->permutationPinv() * v;
}

double CholeskyFactor::inverse_diagonal_entry(int i) const {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(dim_);
  e[i] = 1.0;
  Eigen::VectorXd pe = solver_->permutationP() * e;
  Eigen::VectorXd x = solver_->matrixL().solve(pe);
  return x.squaredNorm();
}

Eigen::SparseMatrix<double> CholeskyFactor::matrix_l() const {
  return Eigen::SparseMatrix<double>(solver_->matrixL());
}

Eigen::VectorXi CholeskyFactor::permutation() const {
  return solver_->permutationP().indices();
}

CholeskyFactor factorize(const Eigen::SparseMatrix<double>& Q) { return CholeskyFactor(Q); }

FieldSample sample_field(const CholeskyFactor& factor, std::uint64_t seed,
                         std::shared_ptr<const TriangleMesh> mesh) {
  NormalRng rng(seed);
  FieldSample s;
  s.seed = seed;
  s.mesh = std::move(mesh);
  s.weights = factor.half_solve(rng.vector(factor.dimension()));
  return s;
}

Eigen::VectorXd marginal_variances(const CholeskyFactor& factor) {
  const int n = factor.dimension();
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = factor.inverse_diagonal_entry(i);
  return v;
}

Eigen::VectorXd marginal_variances(const Eigen::SparseMatrix<double>& Q) {
  return marginal_variances(CholeskyFactor(Q));
}

Eigen::VectorXd thickness_field(const FieldSample& sample, double notional_mm) {
  const int n2 = static_cast<int>(sample.weights.size());
  if (n2 % 2 != 0) throw std::invalid_argument("thickness_field: weight vector has odd length");
  const int n = n2 / 2;
  return Eigen::VectorXd::Constant(n, notional_mm) + sample.weights.head(n) +
         sample.weights.tail(n);
}

}  // namespace spde
