#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spde/data.hpp"
#include "spde/model.hpp"
#include "spde/sample.hpp"

namespace spde {

/// Gaussian log-density -N/2 log(2 pi) + 1/2 log det Q - 1/2 y^T Q y, with
/// the log-determinant taken from a sparse Cholesky factor.
double log_likelihood(const Eigen::SparseMatrix<double>& Q, const Eigen::VectorXd& y);
double log_likelihood(const CholeskyFactor& factor, const Eigen::SparseMatrix<double>& Q,
                      const Eigen::VectorXd& y);

/// Sum of per-panel log-likelihoods; panel j of a nonstationary spec uses its
/// own random-effects block.
double joint_log_likelihood(const ModelSpec& spec, const ParamVector& params,
                            const std::vector<PanelDataset>& datasets);

/// Analytic gradient in the transformed coordinates,
/// d l_i = 1/2 tr(Q^{-1} dQ_i) - 1/2 y^T dQ_i y summed over panels.
Eigen::VectorXd log_likelihood_grad(const ModelSpec& spec, const ParamVector& params,
                                    const std::vector<PanelDataset>& datasets);

/// Fisher information I_ij = 1/2 tr(Q^{-1} dQ_i Q^{-1} dQ_j) summed over
/// panels; symmetric positive semidefinite.
Eigen::MatrixXd fisher_information(const ModelSpec& spec, const ParamVector& params,
                                   const std::vector<PanelDataset>& datasets);

struct FitOptions {
  int max_iterations = 200;
  double grad_tol = 1e-6;   // infinity norm, transformed coordinates
  double rel_tol = 1e-8;    // relative log-likelihood change
  int max_halvings = 30;
  double max_step = 10.0;   // per-iteration cap on the step infinity norm;
                            // the Fisher ridge escalates until it holds
  int surrogate_side = 0;   // 0 = optimize on the full grids
  int threads = 1;          // two-stage panel fits only
  std::uint64_t seed = 0;   // recorded for reproducibility
};

struct FitResult {
  ModelSpec spec;
  Eigen::VectorXd theta;            // transformed coordinates
  std::vector<double> loglik_trace; // optimization objective per accepted step
  int iterations = 0;
  bool converged = false;
  bool fisher_fallback = false;
  double exact_loglik = 0.0;      // joint likelihood on the full datasets
  double surrogate_loglik = 0.0;  // joint likelihood on the optimization data
  std::uint64_t seed = 0;         // copied from FitOptions for reproducibility
  std::vector<int> panel_iterations;   // two-stage only
  std::vector<bool> panel_converged;   // two-stage only

  ParamVector params() const { return ParamVector(spec, theta); }
};

// Generic natural-gradient core. An evaluation bundles the objective value
// with lazy gradient/Fisher closures; nullopt marks an invalid point.
struct NgEval {
  double value = 0.0;
  std::function<Eigen::VectorXd()> grad;
  std::function<Eigen::MatrixXd()> fisher;
};
using NgFunction = std::function<std::optional<NgEval>(const Eigen::VectorXd&)>;

struct NgResult {
  Eigen::VectorXd theta;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  bool fisher_fallback = false;
};

/// theta <- theta + I(theta)^{-1} grad l(theta) with backtracking halving on
/// steps that would decrease the objective and a ridge fallback when the
/// Fisher solve is ill-conditioned.
NgResult natural_gradient_ascent(const NgFunction& f, Eigen::VectorXd theta0,
                                 const FitOptions& options);

/// Maximum-likelihood fit of every free parameter of the spec. When
/// options.surrogate_side > 0 the optimization runs on centered subgrids and
/// only the reported exact_loglik uses the full data.
FitResult natural_gradient_fit(const ModelSpec& spec, const ParamVector& theta0,
                               const std::vector<PanelDataset>& datasets,
                               const FitOptions& options);

/// Stage two of the random-effects procedure: the shared parameters are
/// copied from the matching stationary fit and each panel's Fourier block is
/// optimized independently (parallelizable across panels).
FitResult two_stage_fit(const ModelSpec& nonstat_spec, const FitResult& stationary_fit,
                        const std::vector<PanelDataset>& datasets, const FitOptions& options);

/// Akaike information criterion 2 dim - 2 loglik.
double aic(int dim, double loglik);

struct SelectionRow {
  ModelSpec spec;
  int n_params = 0;
  double surrogate_loglik = 0.0;
  double exact_loglik = 0.0;
  double aic_value = 0.0;
  bool ok = false;
  std::string error;
  FitResult fit;
};

struct SelectionTable {
  std::vector<SelectionRow> rows;  // ordered as the input specs
  int winner = -1;                 // min AIC among successful rows
};

/// Fits every candidate spec (two-stage for nonstationary ones) and ranks by
/// AIC of the exact likelihood. Per-spec failures are recorded in-row.
SelectionTable model_selection(const std::vector<ModelSpec>& specs,
                               const std::vector<PanelDataset>& datasets,
                               const FitOptions& options);

}  // namespace spde
