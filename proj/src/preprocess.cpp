#include "spde/preprocess.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <deque>
#include <mutex>
#include <stdexcept>

#include "spde/errors.hpp"

namespace spde {

Eigen::VectorXd GridField::s_coords() const {
  const int n = static_cast<int>(values.rows());
  Eigen::VectorXd s(n);
  for (int i = 0; i < n; ++i) s[i] = s0 + i * ds;
  return s;
}

Eigen::VectorXd GridField::t_coords() const {
  const int n = static_cast<int>(values.cols());
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) t[i] = t0 + i * dt;
  return t;
}

Eigen::Vector3d pca_normal(const PointCloud& cloud) {
  if (cloud.size() < 3)
    throw InvalidParameterError("pca_normal: need at least 3 points");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.points) mean += p;
  mean /= cloud.size();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : cloud.points) {
    const Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }
  cov /= cloud.size();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d lambda = eig.eigenvalues();  // ascending
  if (!(lambda[2] > 0.0))
    throw InvalidParameterError("pca_normal: degenerate point cloud (all points coincide)");
  if (lambda[1] - lambda[0] <= 1e-12 * lambda[2])
    throw InvalidParameterError(
        "pca_normal: ambiguous normal (no unique direction of least variation)");

  Eigen::Vector3d n = eig.eigenvectors().col(0);
  const double tol = 1e-12;
  if (std::abs(n.z()) > tol) {
    if (n.z() < 0.0) n = -n;
  } else if (std::abs(n.y()) > tol) {
    if (n.y() < 0.0) n = -n;
  } else if (n.x() < 0.0) {
    n = -n;
  }
  return n;
}

namespace {

GridField grid_project_impl(const std::vector<Eigen::Vector3d>& pts, int resolution,
                            const std::optional<std::array<double, 4>>& bounds) {
  if (resolution < 2) throw std::invalid_argument("grid_project: resolution must be >= 2");
  if (pts.empty()) throw std::invalid_argument("grid_project: empty cloud");

  double smin, smax, tmin, tmax;
  if (bounds) {
    smin = (*bounds)[0], smax = (*bounds)[1], tmin = (*bounds)[2], tmax = (*bounds)[3];
  } else {
    smin = smax = pts[0].x();
    tmin = tmax = pts[0].y();
    for (const auto& p : pts) {
      smin = std::min(smin, p.x());
      smax = std::max(smax, p.x());
      tmin = std::min(tmin, p.y());
      tmax = std::max(tmax, p.y());
    }
  }
  if (!(smax > smin) || !(tmax > tmin))
    throw std::invalid_argument("grid_project: cloud does not span a rectangle in the panel plane");

  const int R = resolution;
  const double ds = (smax - smin) / R;
  const double dt = (tmax - tmin) / R;
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(R, R);
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(R, R);
  for (const auto& p : pts) {
    int is = static_cast<int>(std::floor((p.x() - smin) / ds));
    int it = static_cast<int>(std::floor((p.y() - tmin) / dt));
    is = std::clamp(is, 0, R - 1);
    it = std::clamp(it, 0, R - 1);
    sums(is, it) += p.z();
    counts(is, it) += 1;
  }

  GridField g;
  g.values.resize(R, R);
  g.s0 = smin + 0.5 * ds;
  g.t0 = tmin + 0.5 * dt;
  g.ds = ds;
  g.dt = dt;
  g.occupied_cells = 0;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      if (counts(i, j) > 0) {
        g.values(i, j) = sums(i, j) / counts(i, j);
        ++g.occupied_cells;
      }

  const int total = R * R;
  const int empty = total - g.occupied_cells;
  if (empty > total / 10)
    throw std::runtime_error("grid_project: sparse scan, more than 10% of grid cells are empty");

  if (empty > 0) {
    // multi-source BFS: each empty cell copies the nearest occupied cell,
    // row-major order breaking ties
    std::deque<std::pair<int, int>> queue;
    Eigen::MatrixXi filled = (counts.array() > 0).cast<int>();
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < R; ++j)
        if (filled(i, j)) queue.emplace_back(i, j);
    const int di[4] = {1, -1, 0, 0};
    const int dj[4] = {0, 0, 1, -1};
    while (!queue.empty()) {
      const auto [i, j] = queue.front();
      queue.pop_front();
      for (int d = 0; d < 4; ++d) {
        const int ni = i + di[d], nj = j + dj[d];
        if (ni < 0 || nj < 0 || ni >= R || nj >= R || filled(ni, nj)) continue;
        g.values(ni, nj) = g.values(i, j);
        filled(ni, nj) = 1;
        queue.emplace_back(ni, nj);
      }
    }
  }
  return g;
}

}  // namespace

GridField grid_project(const std::vector<Eigen::Vector3d>& points_sth, int resolution) {
  return grid_project_impl(points_sth, resolution, std::nullopt);
}

DetrendResult detrend_quadratic(const Eigen::MatrixXd& heights, const Eigen::VectorXd& s,
                                const Eigen::VectorXd& t) {
  const int ns = static_cast<int>(heights.rows());
  const int nt = static_cast<int>(heights.cols());
  if (s.size() != ns || t.size() != nt)
    throw std::invalid_argument("detrend_quadratic: coordinate/height size mismatch");
  const int N = ns * nt;
  if (N < 6) throw std::invalid_argument("detrend_quadratic: need at least 6 points");

  Eigen::MatrixXd X(N, 6);
  Eigen::VectorXd h(N);
  int row = 0;
  for (int i = 0; i < ns; ++i) {
    for (int j = 0; j < nt; ++j, ++row) {
      const double si = s[i], tj = t[j];
      X.row(row) << 1.0, si, tj, si * si, si * tj, tj * tj;
      h[row] = heights(i, j);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < 6)
    throw std::runtime_error("detrend_quadratic: degenerate fit, rank-deficient design");
  const Eigen::Matrix<double, 6, 1> beta = qr.solve(h);

  DetrendResult out;
  out.coefficients = beta;
  out.residuals.resize(ns, nt);
  row = 0;
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j, ++row) out.residuals(i, j) = h[row] - X.row(row).dot(beta);
  return out;
}

namespace {
std::mutex fftw_planner_mutex;
}

Eigen::MatrixXd fft_filter(const Eigen::MatrixXd& grid, double cutoff_fraction) {
  if (!(cutoff_fraction > 0.0 && cutoff_fraction <= 1.0))
    throw std::invalid_argument("fft_filter: cutoff_fraction must lie in (0, 1]");
  const int R = static_cast<int>(grid.rows());
  const int C = static_cast<int>(grid.cols());
  if (R < 2 || C < 2) throw std::invalid_argument("fft_filter: grid too small");

  std::vector<fftw_complex> buf(static_cast<size_t>(R) * C);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      buf[static_cast<size_t>(i) * C + j][0] = grid(i, j);
      buf[static_cast<size_t>(i) * C + j][1] = 0.0;
    }

  fftw_plan fwd, bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex);
    fwd = fftw_plan_dft_2d(R, C, buf.data(), buf.data(), FFTW_FORWARD, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_2d(R, C, buf.data(), buf.data(), FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  fftw_execute(fwd);

  const double nyq_r = R / 2.0, nyq_c = C / 2.0;
  for (int i = 0; i < R; ++i) {
    const double fr = std::min(i, R - i) / nyq_r;
    for (int j = 0; j < C; ++j) {
      const double fc = std::min(j, C - j) / nyq_c;
      if (std::max(fr, fc) > cutoff_fraction * (1.0 + 1e-12)) {
        buf[static_cast<size_t>(i) * C + j][0] = 0.0;
        buf[static_cast<size_t>(i) * C + j][1] = 0.0;
      }
    }
  }

  fftw_execute(bwd);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }

  const double scale = 1.0 / (static_cast<double>(R) * C);
  Eigen::MatrixXd out(R, C);
  double max_imag = 0.0, max_real = 0.0;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      out(i, j) = buf[static_cast<size_t>(i) * C + j][0] * scale;
      max_imag = std::max(max_imag, std::abs(buf[static_cast<size_t>(i) * C + j][1]) * scale);
      max_real = std::max(max_real, std::abs(out(i, j)));
    }
  if (max_imag > 1e-8 * std::max(1.0, max_real))
    throw std::runtime_error("fft_filter: unexpected imaginary residue");
  return out;
}

Eigen::MatrixXd detrend_and_filter(const Eigen::MatrixXd& heights, const Eigen::VectorXd& s,
                                   const Eigen::VectorXd& t, double cutoff_fraction, double tol,
                                   int max_iterations) {
  Eigen::MatrixXd x = heights;
  const double scale = std::max(1.0, heights.cwiseAbs().maxCoeff());
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::MatrixXd next = fft_filter(detrend_quadratic(x, s, t).residuals, cutoff_fraction);
    const double change = (next - x).cwiseAbs().maxCoeff();
    x = next;
    if (change <= tol * scale) return x;
  }
  return x;
}

PreprocessedPanel preprocess_panel(const PointCloud& cloud, const PreprocessOptions& options) {
  if (cloud.size() < 6) throw std::invalid_argument("preprocess_panel: too few points");
  if (!cloud.side.empty() && cloud.side.size() != cloud.points.size())
    throw std::invalid_argument("preprocess_panel: side labels must cover every point");

  const Eigen::Vector3d w = pca_normal(cloud);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.points) centroid += p;
  centroid /= cloud.size();

  // In-plane frame: t tracks the printing (z) axis where possible.
  Eigen::Vector3d t_axis = Eigen::Vector3d::UnitZ() - w.z() * w;
  if (t_axis.norm() < 1e-8) t_axis = Eigen::Vector3d::UnitY() - w.y() * w;
  t_axis.normalize();
  Eigen::Vector3d s_axis = t_axis.cross(w).normalized();
  if (options.rotate_degrees != 0.0) {
    const double a = options.rotate_degrees * M_PI / 180.0;
    const Eigen::Vector3d s2 = std::cos(a) * s_axis + std::sin(a) * t_axis;
    const Eigen::Vector3d t2 = -std::sin(a) * s_axis + std::cos(a) * t_axis;
    s_axis = s2;
    t_axis = t2;
  }

  std::vector<Eigen::Vector3d> upper, lower;
  const bool labeled = !cloud.side.empty();
  for (int i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d d = cloud.points[i] - centroid;
    const Eigen::Vector3d sth(d.dot(s_axis), d.dot(t_axis), d.dot(w));
    if (options.window) {
      const auto& win = *options.window;
      if (sth.x() < win[0] || sth.x() > win[1] || sth.y() < win[2] || sth.y() > win[3]) continue;
    }
    const bool is_upper = labeled ? cloud.side[i] >= 0 : sth.z() >= 0.0;
    (is_upper ? upper : lower).push_back(sth);
  }
  if (upper.empty() || lower.empty())
    throw std::invalid_argument("preprocess_panel: need points on both surfaces");

  // Shared bounding rectangle keeps the two surface grids aligned.
  std::array<double, 4> bounds = {upper[0].x(), upper[0].x(), upper[0].y(), upper[0].y()};
  auto grow = [&bounds](const std::vector<Eigen::Vector3d>& pts) {
    for (const auto& p : pts) {
      bounds[0] = std::min(bounds[0], p.x());
      bounds[1] = std::max(bounds[1], p.x());
      bounds[2] = std::min(bounds[2], p.y());
      bounds[3] = std::max(bounds[3], p.y());
    }
  };
  grow(upper);
  grow(lower);

  auto surface = [&](const std::vector<Eigen::Vector3d>& pts) {
    GridField g = grid_project_impl(pts, options.resolution, bounds);
    Eigen::MatrixXd filtered = detrend_and_filter(g.values, g.s_coords(), g.t_coords(),
                                                  options.cutoff_fraction);
    return std::make_pair(g, std::move(filtered));
  };
  auto [gu, fu] = surface(upper);
  auto [gl, fl] = surface(lower);

  PreprocessedPanel out;
  out.resolution = options.resolution;
  out.spacing = 0.5 * (gu.ds + gu.dt);
  out.u1 = fu;
  out.u2 = -fl;  // outward-positive distance below the mid-surface
  return out;
}

}  // namespace spde
