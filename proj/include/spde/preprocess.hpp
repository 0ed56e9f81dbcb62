#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

namespace spde {

/// Raw laser-scan points (mm); side labels mark the upper (+1) and lower
/// (-1) surface when known, 0 when unlabeled.
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<int> side;  // empty or one label per point

  int size() const { return static_cast<int>(points.size()); }
};

/// Unit normal of the best-fit plane: the eigenvector of the point
/// covariance with the smallest eigenvalue, oriented into the +z hemisphere
/// (ties broken toward +y, then +x). Throws InvalidParameterError when the
/// two smallest eigenvalues coincide to machine precision (collinear or
/// coincident points); merely near-isotropic clouds return whichever of the
/// near-tied axes the eigensolver selects.
Eigen::Vector3d pca_normal(const PointCloud& cloud);

/// Regular grid of cell-mean heights over the bounding rectangle of the
/// points in the s-t plane.
struct GridField {
  Eigen::MatrixXd values;  // resolution x resolution, (is, it) indexed
  double s0 = 0.0, t0 = 0.0;   // center of cell (0, 0)
  double ds = 1.0, dt = 1.0;   // cell pitch
  int occupied_cells = 0;      // before nearest-neighbor fill

  Eigen::VectorXd s_coords() const;
  Eigen::VectorXd t_coords() const;
};

/// Projects (s, t, h) triples onto a resolution x resolution grid; each cell
/// takes the mean of its points, empty cells copy the nearest occupied cell.
/// Throws when more than 10% of cells are empty.
GridField grid_project(const std::vector<Eigen::Vector3d>& points_sth, int resolution);

/// Least-squares removal of h ~ a + b s + c t + d s^2 + e s t + f t^2.
/// heights(i, j) is the value at (s[i], t[j]).
struct DetrendResult {
  Eigen::MatrixXd residuals;
  Eigen::Matrix<double, 6, 1> coefficients;  // a, b, c, d, e, f
};
DetrendResult detrend_quadratic(const Eigen::MatrixXd& heights, const Eigen::VectorXd& s,
                                const Eigen::VectorXd& t);

/// 2-D Fourier low-pass: modes whose per-axis frequency index exceeds
/// cutoff_fraction * Nyquist (max norm over the two axes) are zeroed.
/// cutoff_fraction = 1 keeps every mode.
Eigen::MatrixXd fft_filter(const Eigen::MatrixXd& grid, double cutoff_fraction);

/// Joint removal of the quadratic trend and the stop band. The two
/// projections do not commute (a discrete quadratic leaks into every
/// frequency), so they alternate to their common fixed point; the composite
/// is idempotent to `tol`.
Eigen::MatrixXd detrend_and_filter(const Eigen::MatrixXd& heights, const Eigen::VectorXd& s,
                                   const Eigen::VectorXd& t, double cutoff_fraction,
                                   double tol = 1e-12, int max_iterations = 200);

/// Full panel pipeline: orient, split sides, grid, detrend and filter.
struct PreprocessOptions {
  int resolution = 300;
  double cutoff_fraction = 0.5;
  std::optional<std::array<double, 4>> window;  // s0, s1, t0, t1 crop
  double rotate_degrees = 0.0;                  // about the panel normal
  std::string panel_id = "panel";
};

struct PreprocessedPanel {
  int resolution = 0;
  double spacing = 0.0;
  Eigen::MatrixXd u1, u2;  // outward perturbations, upper and lower surface
};

PreprocessedPanel preprocess_panel(const PointCloud& cloud, const PreprocessOptions& options);

}  // namespace spde
