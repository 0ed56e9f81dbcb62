#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "spde/errors.hpp"
#include "spde/preprocess.hpp"

using namespace spde;

namespace {

PointCloud plane_cloud(int per_side, double tilt_about_x = 0.0) {
  PointCloud c;
  const double a = tilt_about_x * M_PI / 180.0;
  for (int i = 0; i < per_side; ++i)
    for (int j = 0; j < per_side; ++j) {
      const double x = i * 0.5, y = j * 0.5;
      // rotate the z=0 plane about the x axis
      c.points.emplace_back(x, std::cos(a) * y, std::sin(a) * y);
    }
  return c;
}

Eigen::VectorXd linspace(int n, double lo, double hi) {
  return Eigen::VectorXd::LinSpaced(n, lo, hi);
}

}  // namespace

TEST_CASE("pca_normal") {
  SUBCASE("z = 0 plane gives +z") {
    const Eigen::Vector3d n = pca_normal(plane_cloud(8));
    CHECK((n - Eigen::Vector3d(0, 0, 1)).norm() <= 1e-12);
  }

  SUBCASE("ten-degree tilt about x") {
    const double a = 10.0 * M_PI / 180.0;
    const Eigen::Vector3d expected(0.0, -std::sin(a), std::cos(a));
    const Eigen::Vector3d n = pca_normal(plane_cloud(8, 10.0));
    CHECK((n - expected).norm() <= 1e-6);
  }

  SUBCASE("collinear points have no unique normal") {
    PointCloud line;
    for (int i = 0; i < 10; ++i) line.points.emplace_back(i * 1.0, 2.0 * i, -i * 1.0);
    CHECK_THROWS_AS(pca_normal(line), InvalidParameterError);
  }

  SUBCASE("isotropic blob: ambiguous error or a documented arbitrary unit axis") {
    PointCloud c;
    std::mt19937_64 gen(1);
    std::normal_distribution<double> normal;
    for (int i = 0; i < 500; ++i)
      c.points.emplace_back(normal(gen), normal(gen), normal(gen));
    try {
      const Eigen::Vector3d n = pca_normal(c);
      CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-12));
    } catch (const InvalidParameterError&) {
      CHECK(true);
    }
  }

  SUBCASE("too few or coincident points") {
    PointCloud two;
    two.points = {{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(pca_normal(two), InvalidParameterError);

    PointCloud same;
    same.points = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
    CHECK_THROWS_AS(pca_normal(same), InvalidParameterError);
  }
}

TEST_CASE("detrend_quadratic") {
  const int ns = 12, nt = 10;
  const Eigen::VectorXd s = linspace(ns, -2.0, 3.0);
  const Eigen::VectorXd t = linspace(nt, 0.0, 4.0);

  auto quad = [](double si, double tj) {
    return 0.7 - 0.3 * si + 0.2 * tj + 0.05 * si * si - 0.12 * si * tj + 0.08 * tj * tj;
  };

  SUBCASE("exact quadratic leaves zero residual") {
    Eigen::MatrixXd h(ns, nt);
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j) h(i, j) = quad(s[i], t[j]);
    const DetrendResult r = detrend_quadratic(h, s, t);
    CHECK(r.residuals.cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("constant input is absorbed by the intercept") {
    const Eigen::MatrixXd h = Eigen::MatrixXd::Constant(ns, nt, 2.5);
    const DetrendResult r = detrend_quadratic(h, s, t);
    CHECK(r.residuals.cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(r.coefficients[0] == doctest::Approx(2.5).epsilon(1e-10));
  }

  SUBCASE("quadratic plus sinusoid leaves the projected sinusoid") {
    Eigen::MatrixXd h(ns, nt), wave(ns, nt);
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j) {
        wave(i, j) = std::sin(3.0 * s[i]);
        h(i, j) = quad(s[i], t[j]) + wave(i, j);
      }
    const DetrendResult r = detrend_quadratic(h, s, t);

    // dense least-squares oracle: remove the wave's own quadratic projection
    Eigen::MatrixXd X(ns * nt, 6);
    Eigen::VectorXd w(ns * nt);
    int row = 0;
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j, ++row) {
        X.row(row) << 1.0, s[i], t[j], s[i] * s[i], s[i] * t[j], t[j] * t[j];
        w[row] = wave(i, j);
      }
    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(w);
    const Eigen::VectorXd expected = w - X * beta;
    row = 0;
    double max_diff = 0.0;
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j, ++row)
        max_diff = std::max(max_diff, std::abs(r.residuals(i, j) - expected[row]));
    CHECK(max_diff <= 1e-9);
  }

  SUBCASE("residuals satisfy the normal equations") {
    Eigen::MatrixXd h(ns, nt);
    std::mt19937_64 gen(3);
    std::normal_distribution<double> normal;
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j) h(i, j) = quad(s[i], t[j]) + 0.3 * normal(gen);
    const DetrendResult r = detrend_quadratic(h, s, t);
    // projection onto every basis column is zero, the constant included
    Eigen::VectorXd dots = Eigen::VectorXd::Zero(6);
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j) {
        const Eigen::Matrix<double, 6, 1> phi{
            1.0, s[i], t[j], s[i] * s[i], s[i] * t[j], t[j] * t[j]};
        dots += phi * r.residuals(i, j);
      }
    CHECK(dots.cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(r.residuals.mean()) <= 1e-10);
  }

  SUBCASE("rank-deficient design is rejected") {
    // all points share one s value: the design cannot resolve s terms
    const Eigen::VectorXd s1 = Eigen::VectorXd::Constant(3, 2.0);
    const Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 4);
    CHECK_THROWS_AS(detrend_quadratic(h, s1, linspace(4, 0.0, 1.0)), std::runtime_error);
  }
}

TEST_CASE("grid_project") {
  SUBCASE("one point per cell is the identity") {
    std::vector<Eigen::Vector3d> pts;
    const int R = 6;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j)
        pts.emplace_back(i * 1.0, j * 1.0, 10.0 * i + j);
    const GridField g = grid_project(pts, R);
    CHECK(g.occupied_cells == R * R);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) CHECK(g.values(i, j) == 10.0 * i + j);
  }

  SUBCASE("two points per cell take the mean") {
    std::vector<Eigen::Vector3d> pts;
    const int R = 3;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) {
        pts.emplace_back(i + 0.25, j + 0.25, 1.0);
        pts.emplace_back(i + 0.75, j + 0.75, 3.0);
      }
    // pin the bounding box with the outermost points already included
    const GridField g = grid_project(pts, R);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) CHECK(g.values(i, j) == doctest::Approx(2.0));
  }

  SUBCASE("dense cloud reproduces a smooth function within in-cell variation") {
    auto f = [](double x, double y) { return std::sin(0.8 * x) + 0.3 * std::cos(1.1 * y); };
    std::vector<Eigen::Vector3d> pts;
    const int R = 10, dense_factor = 4;
    const int N = R * dense_factor;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const double x = (i + 0.5) / dense_factor, y = (j + 0.5) / dense_factor;
        pts.emplace_back(x, y, f(x, y));
      }
    const GridField g = grid_project(pts, R);
    // max derivative ~ 1, cell size 1: in-cell variation bound ~ sqrt(2)
    double max_err = 0.0;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j)
        max_err = std::max(max_err,
                           std::abs(g.values(i, j) - f(g.s0 + i * g.ds, g.t0 + j * g.dt)));
    CHECK(max_err <= std::sqrt(2.0));
  }

  SUBCASE("sparse scans are rejected") {
    std::vector<Eigen::Vector3d> pts;
    pts.emplace_back(0.0, 0.0, 1.0);
    pts.emplace_back(9.0, 9.0, 1.0);
    CHECK_THROWS_AS(grid_project(pts, 10), std::runtime_error);
  }

  SUBCASE("a few empty cells are filled from neighbors") {
    std::vector<Eigen::Vector3d> pts;
    const int R = 4;
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j)
        if (!(i == 2 && j == 2)) pts.emplace_back(i * 1.0, j * 1.0, 5.0);
    const GridField g = grid_project(pts, R);
    CHECK(g.occupied_cells == R * R - 1);
    CHECK(g.values(2, 2) == 5.0);  // copied from a neighbor
  }
}

TEST_CASE("fft_filter") {
  const int R = 32;

  SUBCASE("cutoff 1 is the identity") {
    std::mt19937_64 gen(9);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd grid(R, R);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) grid(i, j) = normal(gen);
    const Eigen::MatrixXd out = fft_filter(grid, 1.0);
    CHECK((out - grid).cwiseAbs().maxCoeff() <= 1e-12 * grid.cwiseAbs().maxCoeff());
  }

  SUBCASE("a mode above the cutoff is removed") {
    Eigen::MatrixXd grid(R, R);
    const int k = 12;  // index 12 of 16 = 0.75 of Nyquist
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) grid(i, j) = std::sin(2.0 * M_PI * k * i / R);
    const Eigen::MatrixXd out = fft_filter(grid, 0.5);
    CHECK(out.cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("a mode below the cutoff passes unchanged") {
    Eigen::MatrixXd grid(R, R);
    const int k = 3;  // 3/16 of Nyquist
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) grid(i, j) = std::sin(2.0 * M_PI * k * j / R);
    const Eigen::MatrixXd out = fft_filter(grid, 0.5);
    CHECK((out - grid).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("linearity") {
    std::mt19937_64 gen(17);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(R, R), y(R, R);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j) {
        x(i, j) = normal(gen);
        y(i, j) = normal(gen);
      }
    const double a = 1.7, b = -0.4;
    const Eigen::MatrixXd lhs = fft_filter(a * x + b * y, 0.5);
    const Eigen::MatrixXd rhs = a * fft_filter(x, 0.5) + b * fft_filter(y, 0.5);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("cutoff domain") {
    CHECK_THROWS_AS(fft_filter(Eigen::MatrixXd::Zero(8, 8), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fft_filter(Eigen::MatrixXd::Zero(8, 8), 1.5), std::invalid_argument);
  }
}

TEST_CASE("preprocess_panel: pipeline on a synthetic two-surface cloud") {
  // panel in the x-z plane: mid-surface y = quadratic trend, surfaces offset
  // by half the notional thickness plus a smooth in-plane wave
  PointCloud cloud;
  const int N = 60;
  auto wave = [](double x, double z) { return 0.2 * std::sin(0.4 * x) * std::cos(0.3 * z); };
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const double x = i * 0.5, z = j * 0.5;
      const double trend = 0.002 * (x - 15.0) * (x - 15.0) - 0.001 * x * z;
      cloud.points.emplace_back(x, trend + 1.75 + wave(x, z), z);
      cloud.side.push_back(1);
      cloud.points.emplace_back(x, trend - 1.75 + wave(x, z), z);
      cloud.side.push_back(-1);
    }

  PreprocessOptions opt;
  opt.resolution = 30;
  opt.cutoff_fraction = 1.0;  // keep the wave intact
  const PreprocessedPanel panel = preprocess_panel(cloud, opt);

  CHECK(panel.resolution == 30);
  CHECK(panel.spacing == doctest::Approx(1.0).epsilon(0.05));
  // upper surface follows +wave, lower offset is -wave after sign flip:
  // thickness perturbation u1 + u2 cancels, so both stay bounded by the wave
  CHECK(panel.u1.cwiseAbs().maxCoeff() <= 0.25);
  CHECK(panel.u2.cwiseAbs().maxCoeff() <= 0.25);
  // u1 tracks the wave away from the detrending edges
  CHECK((panel.u1 + panel.u2).cwiseAbs().maxCoeff() <= 0.1);
}

TEST_CASE("preprocess pipeline is idempotent on its own output") {
  std::mt19937_64 gen(23);
  std::normal_distribution<double> normal;
  const int R = 16;
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j) pts.emplace_back(i * 1.0, j * 1.0, normal(gen));

  auto run = [&](const std::vector<Eigen::Vector3d>& cloud) {
    const GridField g = grid_project(cloud, R);
    return std::make_pair(
        g, detrend_and_filter(g.values, g.s_coords(), g.t_coords(), 0.5));
  };
  const auto [g1, once] = run(pts);

  // feed the filtered grid back through as one point per cell center
  std::vector<Eigen::Vector3d> pts2;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      pts2.emplace_back(g1.s0 + i * g1.ds, g1.t0 + j * g1.dt, once(i, j));
  const auto [g2, twice] = run(pts2);

  CHECK((twice - once).cwiseAbs().maxCoeff() <= 1e-10);
}
