#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "spde/errors.hpp"
#include "spde/fem.hpp"
#include "spde/mesh.hpp"
#include "spde/model.hpp"
#include "spde/sample.hpp"

using namespace spde;

namespace {

Eigen::SparseMatrix<double> sparse_identity(int n, double scale = 1.0) {
  Eigen::SparseMatrix<double> m(n, n);
  m.setIdentity();
  return Eigen::SparseMatrix<double>(scale * m);
}

Eigen::SparseMatrix<double> panel_precision(int res, unsigned seed_tag = 0) {
  const TriangleMesh mesh = grid_panel_mesh(res, res, 1.0);
  const FemMatrices fem = assemble(mesh);
  const ModelSpec spec{OperatorKind::IsoStationary, NoiseKind::White, 1};
  ParamVector::Named named;
  named.tau_d = 1.0 + 0.1 * seed_tag;
  named.tau_o = 0.3;
  named.eta_d = 0.5;
  named.eta_o = 0.2;
  return build_precision(spec, ParamVector::from_named(spec, named), fem, mesh, 0, false).Q;
}

}  // namespace

TEST_CASE("factorize: identities") {
  const CholeskyFactor f1(sparse_identity(4));
  CHECK(f1.log_det() == 0.0);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(4, 1.0, 4.0);
  CHECK((f1.solve(b) - b).cwiseAbs().maxCoeff() <= 1e-14);

  const CholeskyFactor f2(sparse_identity(2, 4.0));
  CHECK(f2.log_det() == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-14));
  CHECK(f2.matrix_l().coeff(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("factorize: reconstruction of a panel precision") {
  const Eigen::SparseMatrix<double> Q = panel_precision(5);
  const CholeskyFactor f(Q);

  const Eigen::SparseMatrix<double> L = f.matrix_l();
  const Eigen::VectorXi p = f.permutation();
  const int n = f.dimension();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) P(p[i], i) = 1.0;  // x -> P x permutes rows
  const Eigen::MatrixXd reconstructed =
      P.transpose() * Eigen::MatrixXd(L) * Eigen::MatrixXd(L).transpose() * P;
  const Eigen::MatrixXd Qd(Q);
  CHECK((reconstructed - Qd).cwiseAbs().maxCoeff() <= 1e-10 * Qd.cwiseAbs().maxCoeff());

  // log det against the dense oracle
  const double dense_logdet = std::log(Qd.determinant());
  CHECK(f.log_det() == doctest::Approx(dense_logdet).epsilon(1e-8));
}

TEST_CASE("factorize: non-PD input reports a pivot") {
  Eigen::SparseMatrix<double> m(3, 3);
  std::vector<Eigen::Triplet<double>> t = {{0, 0, 1.0}, {1, 1, -2.0}, {2, 2, 1.0}};
  m.setFromTriplets(t.begin(), t.end());
  CHECK_THROWS_AS(CholeskyFactor{m}, NotPositiveDefiniteError);
  try {
    CholeskyFactor f(m);
  } catch (const NotPositiveDefiniteError& e) {
    CHECK(e.pivot_index >= 0);
    CHECK(e.pivot_index < 3);
  }
}

TEST_CASE("sample_field: moments for diagonal precisions") {
  const int draws = 100000;

  SUBCASE("identity precision gives standard normals") {
    const CholeskyFactor f(sparse_identity(4));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd second = Eigen::VectorXd::Zero(4);
    for (int s = 0; s < draws; ++s) {
      const FieldSample fs = sample_field(f, split_seed(123, s));
      mean += fs.weights;
      second += fs.weights.cwiseProduct(fs.weights);
    }
    mean /= draws;
    second /= draws;
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(mean[i]) <= 0.01);
      CHECK(std::abs(second[i] - mean[i] * mean[i] - 1.0) <= 0.02);
    }
  }

  SUBCASE("precision 4 gives variance 1/4") {
    const CholeskyFactor f(sparse_identity(2, 4.0));
    double second = 0.0;
    for (int s = 0; s < draws; ++s) {
      const FieldSample fs = sample_field(f, split_seed(9, s));
      second += fs.weights[0] * fs.weights[0];
    }
    second /= draws;
    CHECK(second == doctest::Approx(0.25).epsilon(0.05));
  }
}

TEST_CASE("sample_field: determinism") {
  const CholeskyFactor f(panel_precision(4));
  const FieldSample a = sample_field(f, 42);
  const FieldSample b = sample_field(f, 42);
  CHECK(a.weights == b.weights);
  CHECK(a.seed == 42);
  const FieldSample c = sample_field(f, 43);
  CHECK(a.weights != c.weights);
}

TEST_CASE("sample_field: empirical covariance matches the dense inverse") {
  // 5x5 panel: 2n = 50
  const Eigen::SparseMatrix<double> Q = panel_precision(5);
  const int n = static_cast<int>(Q.rows());
  const CholeskyFactor f(Q);
  const Eigen::MatrixXd cov = Eigen::MatrixXd(Q).inverse();

  const int draws = 10000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (int s = 0; s < draws; ++s) {
    const FieldSample fs = sample_field(f, split_seed(7, s));
    acc.noalias() += fs.weights * fs.weights.transpose();
  }
  acc /= draws;

  int within = 0, total = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double se =
          std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / draws);
      if (std::abs(acc(i, j) - cov(i, j)) <= 3.0 * se) ++within;
      ++total;
    }
  CHECK(static_cast<double>(within) / total >= 0.99);
}

TEST_CASE("marginal_variances") {
  SUBCASE("diagonal oracle") {
    const Eigen::VectorXd v = marginal_variances(sparse_identity(2, 2.0));
    CHECK((v - Eigen::Vector2d(0.5, 0.5)).cwiseAbs().maxCoeff() <= 1e-14);
  }

  SUBCASE("boundary inflation on a panel, against the dense inverse") {
    const int res = 20;
    const Eigen::SparseMatrix<double> Q = panel_precision(res);
    const Eigen::VectorXd v = marginal_variances(Q);
    const Eigen::VectorXd oracle = Eigen::MatrixXd(Q).inverse().diagonal();
    CHECK((v - oracle).cwiseAbs().maxCoeff() <= 1e-9 * oracle.maxCoeff());

    // corner vertex vs panel center, upper-surface block
    const int corner = 0;
    const int center = (res / 2) * res + res / 2;
    CHECK(v[corner] > v[center]);
  }

  SUBCASE("block-diagonal splits") {
    Eigen::SparseMatrix<double> block(2, 2);
    std::vector<Eigen::Triplet<double>> t = {{0, 0, 2.0}, {1, 1, 5.0}};
    block.setFromTriplets(t.begin(), t.end());
    const Eigen::VectorXd whole = marginal_variances(block);
    CHECK(whole[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(whole[1] == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("thickness_field") {
  FieldSample zero;
  zero.weights = Eigen::VectorXd::Zero(8);
  CHECK((thickness_field(zero, 3.5) - Eigen::VectorXd::Constant(4, 3.5)).cwiseAbs().maxCoeff() ==
        0.0);

  FieldSample shifted;
  shifted.weights = Eigen::VectorXd::Constant(8, 0.1);
  CHECK((thickness_field(shifted, 3.5) - Eigen::VectorXd::Constant(4, 3.7))
            .cwiseAbs()
            .maxCoeff() <= 1e-15);
}

TEST_CASE("thickness over many samples is Gaussian around the notional value") {
  const Eigen::SparseMatrix<double> Q = panel_precision(4);
  const CholeskyFactor f(Q);
  const double notional = 3.5;
  const int draws = 20000;
  double mean = 0.0, count = 0.0;
  for (int s = 0; s < draws; ++s) {
    const Eigen::VectorXd t = thickness_field(sample_field(f, split_seed(3, s)), notional);
    mean += t.sum();
    count += t.size();
  }
  mean /= count;
  CHECK(mean == doctest::Approx(notional).epsilon(0.01));
}

TEST_CASE("log det from the factor matches the dense value on larger systems") {
  const Eigen::SparseMatrix<double> Q = panel_precision(9);  // 2n = 162
  const CholeskyFactor f(Q);
  const Eigen::MatrixXd Qd(Q);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Qd);
  const double oracle = eig.eigenvalues().array().log().sum();
  CHECK(std::abs(f.log_det() - oracle) <= 1e-8 * std::abs(oracle));
}
