#include "spde/infer.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <stdexcept>

#include "spde/errors.hpp"

namespace spde {

namespace {

constexpr int kDenseTraceLimit = 8000;  // largest 2n for dense Q^{-1} work

void check_dims(const Eigen::SparseMatrix<double>& Q, const Eigen::VectorXd& y) {
  if (Q.rows() != Q.cols()) throw std::invalid_argument("log_likelihood: Q must be square");
  if (Q.rows() != y.size())
    throw std::invalid_argument("log_likelihood: dimension mismatch between Q and y");
}

}  // namespace

double log_likelihood(const CholeskyFactor& factor, const Eigen::SparseMatrix<double>& Q,
                      const Eigen::VectorXd& y) {
  check_dims(Q, y);
  const double n = static_cast<double>(y.size());
  return -0.5 * n * std::log(2.0 * M_PI) + 0.5 * factor.log_det() - 0.5 * y.dot(Q * y);
}

double log_likelihood(const Eigen::SparseMatrix<double>& Q, const Eigen::VectorXd& y) {
  check_dims(Q, y);
  return log_likelihood(CholeskyFactor(Q), Q, y);
}

namespace {

// dataset index -> random-effects block of the model
std::vector<int> default_panel_indices(const ModelSpec& spec, size_t n_datasets) {
  std::vector<int> idx(n_datasets, 0);
  if (spec.nonstationary()) {
    if (static_cast<int>(n_datasets) != spec.n_panels)
      throw std::invalid_argument(
          "nonstationary spec requires one dataset per panel (n_panels = " +
          std::to_string(spec.n_panels) + ", datasets = " + std::to_string(n_datasets) + ")");
    for (size_t d = 0; d < n_datasets; ++d) idx[d] = static_cast<int>(d);
  }
  return idx;
}

double sparse_dense_dot(const Eigen::SparseMatrix<double>& A, const Eigen::MatrixXd& S) {
  double sum = 0.0;
  for (int col = 0; col < A.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, col); it; ++it)
      sum += it.value() * S(it.row(), col);
  return sum;
}

Eigen::MatrixXd dense_inverse(const CholeskyFactor& factor) {
  const int n = factor.dimension();
  if (n > kDenseTraceLimit)
    throw std::runtime_error(
        "dense trace computation needs 2n <= " + std::to_string(kDenseTraceLimit) +
        "; optimize on a surrogate subset instead (FitOptions::surrogate_side)");
  return factor.solve_dense(Eigen::MatrixXd::Identity(n, n));
}

// Gradient and Fisher contributions of one panel, restricted to `free`.
struct PanelDerivatives {
  Eigen::VectorXd grad;
  Eigen::MatrixXd fisher;
};

PanelDerivatives panel_derivatives(const PrecisionModel& pm, const CholeskyFactor& factor,
                                   const Eigen::VectorXd& y, const std::vector<int>& free,
                                   bool want_fisher) {
  const int p = static_cast<int>(free.size());
  PanelDerivatives out;
  out.grad = Eigen::VectorXd::Zero(p);
  if (want_fisher) out.fisher = Eigen::MatrixXd::Zero(p, p);

  const Eigen::MatrixXd S = dense_inverse(factor);
  for (int k = 0; k < p; ++k) {
    const Eigen::SparseMatrix<double>& D = pm.dQ[free[k]];
    if (!D.nonZeros()) continue;
    out.grad[k] = 0.5 * sparse_dense_dot(D, S) - 0.5 * y.dot(D * y);
  }
  if (!want_fisher) return out;

  // I_kl = 1/2 tr(S D_k S D_l) via Z_l = S D_l S evaluated on D_k's pattern.
  for (int l = 0; l < p; ++l) {
    const Eigen::SparseMatrix<double>& Dl = pm.dQ[free[l]];
    if (!Dl.nonZeros()) continue;
    const Eigen::MatrixXd W = Dl * S;  // sparse * dense
    // Union pattern is contained in Q's pattern; evaluate Z_l there.
    Eigen::SparseMatrix<double> Z = pm.Q;
    for (int col = 0; col < Z.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(Z, col); it; ++it)
        it.valueRef() = S.col(it.row()).dot(W.col(col));
    for (int k = 0; k <= l; ++k) {
      const Eigen::SparseMatrix<double>& Dk = pm.dQ[free[k]];
      if (!Dk.nonZeros()) continue;
      double acc = 0.0;
      for (int col = 0; col < Dk.outerSize(); ++col) {
        Eigen::SparseMatrix<double>::InnerIterator itz(Z, col);
        for (Eigen::SparseMatrix<double>::InnerIterator itk(Dk, col); itk; ++itk) {
          while (itz && itz.row() < itk.row()) ++itz;
          if (itz && itz.row() == itk.row()) {
            acc += itk.value() * itz.value();
          } else {
            // entry outside Q's pattern; evaluate Z there directly
            acc += itk.value() * S.col(itk.row()).dot(W.col(col));
          }
        }
      }
      out.fisher(k, l) += 0.5 * acc;
      if (k != l) out.fisher(l, k) = out.fisher(k, l);
    }
  }
  return out;
}

std::vector<int> all_indices(int p) {
  std::vector<int> v(p);
  for (int i = 0; i < p; ++i) v[i] = i;
  return v;
}

}  // namespace

double joint_log_likelihood(const ModelSpec& spec, const ParamVector& params,
                            const std::vector<PanelDataset>& datasets) {
  const auto panels = default_panel_indices(spec, datasets.size());
  double total = 0.0;
  for (size_t d = 0; d < datasets.size(); ++d) {
    PrecisionModel pm =
        build_precision(spec, params, *datasets[d].fem, *datasets[d].mesh, panels[d], false);
    total += log_likelihood(CholeskyFactor(pm.Q), pm.Q, datasets[d].y);
  }
  return total;
}

Eigen::VectorXd log_likelihood_grad(const ModelSpec& spec, const ParamVector& params,
                                    const std::vector<PanelDataset>& datasets) {
  const auto panels = default_panel_indices(spec, datasets.size());
  const auto free = all_indices(params.size());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.size());
  for (size_t d = 0; d < datasets.size(); ++d) {
    PrecisionModel pm =
        build_precision(spec, params, *datasets[d].fem, *datasets[d].mesh, panels[d], true);
    CholeskyFactor factor(pm.Q);
    g += panel_derivatives(pm, factor, datasets[d].y, free, false).grad;
  }
  return g;
}

Eigen::MatrixXd fisher_information(const ModelSpec& spec, const ParamVector& params,
                                   const std::vector<PanelDataset>& datasets) {
  const auto panels = default_panel_indices(spec, datasets.size());
  const auto free = all_indices(params.size());
  Eigen::MatrixXd I = Eigen::MatrixXd::Zero(params.size(), params.size());
  for (size_t d = 0; d < datasets.size(); ++d) {
    PrecisionModel pm =
        build_precision(spec, params, *datasets[d].fem, *datasets[d].mesh, panels[d], true);
    CholeskyFactor factor(pm.Q);
    I += panel_derivatives(pm, factor, datasets[d].y, free, true).fisher;
  }
  return I;
}

NgResult natural_gradient_ascent(const NgFunction& f, Eigen::VectorXd theta0,
                                 const FitOptions& options) {
  NgResult res;
  res.theta = std::move(theta0);
  auto eval = f(res.theta);
  if (!eval) throw InvalidParameterError("natural_gradient_ascent: invalid starting point");
  res.trace.push_back(eval->value);

  const int p = static_cast<int>(res.theta.size());
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd g = eval->grad();
    if (g.lpNorm<Eigen::Infinity>() <= options.grad_tol) {
      res.converged = true;
      break;
    }

    Eigen::MatrixXd info = eval->fisher();
    Eigen::VectorXd direction;
    {
      // Rank-deficient Fisher matrices are expected (documented scale
      // degeneracy between H and tau/eta). Solve on the informative
      // eigenspaces only: near-null directions carry no information and get
      // no step, while the rest take the full natural-gradient step.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
      bool solved = false;
      if (eig.info() == Eigen::Success && eig.eigenvalues().maxCoeff() > 0.0) {
        const Eigen::VectorXd& lambda = eig.eigenvalues();
        const double floor = std::max(1e-8 * lambda.maxCoeff(), 1e-300);
        direction = Eigen::VectorXd::Zero(p);
        for (int k = 0; k < p; ++k) {
          if (lambda[k] <= floor) continue;
          const Eigen::VectorXd v = eig.eigenvectors().col(k);
          direction += (v.dot(g) / lambda[k]) * v;
        }
        solved = direction.allFinite() && direction.lpNorm<Eigen::Infinity>() > 0.0;
      }
      if (!solved) {
        direction = g / (1.0 + g.norm());  // damped identity step
        res.fisher_fallback = true;
      }
      if (direction.lpNorm<Eigen::Infinity>() > options.max_step)
        direction *= options.max_step / direction.lpNorm<Eigen::Infinity>();
    }

    // Backtracking: accepted steps never decrease the objective.
    bool accepted = false;
    double accepted_change = 0.0;
    auto line_search = [&](const Eigen::VectorXd& dir) {
      double step = 1.0;
      for (int h = 0; h <= options.max_halvings; ++h, step *= 0.5) {
        const Eigen::VectorXd candidate = res.theta + step * dir;
        auto e2 = f(candidate);
        if (!e2 || !std::isfinite(e2->value)) continue;
        const double change = e2->value - eval->value;
        if (change < 0.0) continue;
        res.theta = candidate;
        eval = std::move(e2);
        res.trace.push_back(eval->value);
        ++res.iterations;
        accepted = true;
        accepted_change = change;
        return;
      }
    };
    line_search(direction);
    if (!accepted) {
      // the natural direction stalled (e.g. a tilted near-null valley);
      // rescue with a damped gradient step before giving up
      Eigen::VectorXd gdir = g / (1.0 + g.norm());
      if (gdir.lpNorm<Eigen::Infinity>() > options.max_step)
        gdir *= options.max_step / gdir.lpNorm<Eigen::Infinity>();
      line_search(gdir);
      if (accepted) res.fisher_fallback = true;
    }
    if (!accepted) break;  // no admissible step at float resolution

    if (accepted_change <= options.rel_tol * std::max(1.0, std::abs(eval->value))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

namespace {

// Objective over the flat coordinates listed in `free`, the rest pinned to
// `base`. Each dataset is paired with its random-effects block.
NgFunction make_spde_objective(const ModelSpec& spec, const ParamVector& base,
                               std::shared_ptr<const std::vector<PanelDataset>> datasets,
                               std::vector<int> panels, std::vector<int> free) {
  return [spec, base, datasets, panels = std::move(panels),
          free = std::move(free)](const Eigen::VectorXd& theta) -> std::optional<NgEval> {
    Eigen::VectorXd full = base.flat();
    for (size_t k = 0; k < free.size(); ++k) full[free[k]] = theta[k];

    struct State {
      std::vector<PrecisionModel> pms;
      std::vector<CholeskyFactor> factors;
    };
    auto state = std::make_shared<State>();
    double value = 0.0;
    try {
      ParamVector params(spec, full);
      for (size_t d = 0; d < datasets->size(); ++d) {
        const auto& ds = (*datasets)[d];
        PrecisionModel pm = build_precision(spec, params, *ds.fem, *ds.mesh, panels[d], true);
        CholeskyFactor factor(pm.Q);
        value += log_likelihood(factor, pm.Q, ds.y);
        state->pms.push_back(std::move(pm));
        state->factors.push_back(std::move(factor));
      }
    } catch (const InvalidParameterError&) {
      return std::nullopt;
    } catch (const NotPositiveDefiniteError&) {
      return std::nullopt;
    }
    if (!std::isfinite(value)) return std::nullopt;

    NgEval eval;
    eval.value = value;
    auto derivs = [state, datasets, free](bool fisher) {
      const int p = static_cast<int>(free.size());
      PanelDerivatives total;
      total.grad = Eigen::VectorXd::Zero(p);
      total.fisher = Eigen::MatrixXd::Zero(p, p);
      for (size_t d = 0; d < datasets->size(); ++d) {
        PanelDerivatives pd = panel_derivatives(state->pms[d], state->factors[d],
                                                (*datasets)[d].y, free, fisher);
        total.grad += pd.grad;
        if (fisher) total.fisher += pd.fisher;
      }
      return total;
    };
    eval.grad = [derivs]() { return derivs(false).grad; };
    eval.fisher = [derivs]() { return derivs(true).fisher; };
    return eval;
  };
}

std::vector<PanelDataset> optimization_datasets(const std::vector<PanelDataset>& datasets,
                                                const FitOptions& options) {
  if (options.surrogate_side <= 0) return datasets;
  std::vector<PanelDataset> out;
  out.reserve(datasets.size());
  for (const auto& d : datasets) out.push_back(surrogate_subset(d, options.surrogate_side));
  return out;
}

}  // namespace

FitResult natural_gradient_fit(const ModelSpec& spec, const ParamVector& theta0,
                               const std::vector<PanelDataset>& datasets,
                               const FitOptions& options) {
  if (datasets.empty()) throw std::invalid_argument("natural_gradient_fit: no datasets");
  const auto panels = default_panel_indices(spec, datasets.size());
  auto opt_data = std::make_shared<const std::vector<PanelDataset>>(
      optimization_datasets(datasets, options));

  NgFunction objective = make_spde_objective(spec, theta0, opt_data, panels,
                                             all_indices(theta0.size()));
  NgResult ng = natural_gradient_ascent(objective, theta0.flat(), options);

  // Swapping both coupling pairs (tau_d <-> tau_o, eta_d <-> eta_o) is an
  // exact symmetry of the likelihood, and spurious local maxima appear with
  // the pairs assigned inconsistently. Restart from the single-pair swaps of
  // the solution and keep the best run.
  const ParamLayout layout = param_layout(spec);
  for (int round = 0; round < 2; ++round) {
    bool improved = false;
    for (int which : {0, 1}) {
      Eigen::VectorXd start = ng.theta;
      if (which == 0)
        std::swap(start[layout.tau_d], start[layout.tau_o]);
      else
        std::swap(start[layout.eta_d], start[layout.eta_o]);
      NgResult alt = natural_gradient_ascent(objective, start, options);
      if (alt.trace.back() > ng.trace.back()) {
        ng = std::move(alt);
        improved = true;
      }
    }
    if (!improved) break;
  }

  FitResult fit;
  fit.spec = spec;
  fit.theta = ng.theta;
  fit.loglik_trace = std::move(ng.trace);
  fit.iterations = ng.iterations;
  fit.converged = ng.converged;
  fit.fisher_fallback = ng.fisher_fallback;
  fit.surrogate_loglik = fit.loglik_trace.back();
  fit.exact_loglik = joint_log_likelihood(spec, fit.params(), datasets);
  fit.seed = options.seed;
  return fit;
}

FitResult two_stage_fit(const ModelSpec& nonstat_spec, const FitResult& stationary_fit,
                        const std::vector<PanelDataset>& datasets, const FitOptions& options) {
  if (!nonstat_spec.nonstationary())
    throw std::invalid_argument("two_stage_fit: spec must be nonstationary");
  ModelSpec expected = nonstat_spec.stationary_counterpart();
  expected.n_panels = stationary_fit.spec.n_panels;
  if (stationary_fit.spec != expected)
    throw std::invalid_argument("two_stage_fit: stationary fit does not match the spec");
  if (static_cast<int>(datasets.size()) != nonstat_spec.n_panels)
    throw std::invalid_argument("two_stage_fit: need one dataset per panel");

  // Stage-1 parameters become the shared block; Fourier blocks start at zero.
  const ParamLayout stat_layout = param_layout(stationary_fit.spec);
  const ParamLayout layout = param_layout(nonstat_spec);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(layout.total);
  full[layout.tau_d] = stationary_fit.theta[stat_layout.tau_d];
  full[layout.tau_o] = stationary_fit.theta[stat_layout.tau_o];
  full[layout.eta_d] = stationary_fit.theta[stat_layout.eta_d];
  full[layout.eta_o] = stationary_fit.theta[stat_layout.eta_o];
  if (layout.h1 >= 0) {
    full[layout.h1] = stationary_fit.theta[stat_layout.h1];
    full[layout.h2] = stationary_fit.theta[stat_layout.h2];
  }
  if (layout.eta_noise >= 0) full[layout.eta_noise] = stationary_fit.theta[stat_layout.eta_noise];
  if (layout.theta_osc >= 0) full[layout.theta_osc] = stationary_fit.theta[stat_layout.theta_osc];
  const ParamVector start(nonstat_spec, full);

  const int n_panels = nonstat_spec.n_panels;
  auto fit_panel = [&](int j) -> NgResult {
    std::vector<int> free;
    for (int k = 0; k < 16; ++k) free.push_back(layout.gamma_tau_start(j) + k);
    auto panel_data = std::make_shared<const std::vector<PanelDataset>>(
        optimization_datasets({datasets[j]}, options));
    NgFunction objective = make_spde_objective(nonstat_spec, start, panel_data, {j}, free);
    return natural_gradient_ascent(objective, Eigen::VectorXd::Zero(16), options);
  };

  std::vector<NgResult> panel_results(n_panels);
  if (options.threads > 1) {
    std::vector<std::future<NgResult>> futures;
    futures.reserve(n_panels);
    for (int j = 0; j < n_panels; ++j)
      futures.push_back(std::async(std::launch::async, fit_panel, j));
    for (int j = 0; j < n_panels; ++j) panel_results[j] = futures[j].get();
  } else {
    for (int j = 0; j < n_panels; ++j) panel_results[j] = fit_panel(j);
  }

  FitResult fit;
  fit.spec = nonstat_spec;
  fit.theta = full;
  fit.seed = options.seed;
  fit.converged = true;
  for (int j = 0; j < n_panels; ++j) {
    const NgResult& r = panel_results[j];
    for (int k = 0; k < 16; ++k) fit.theta[layout.gamma_tau_start(j) + k] = r.theta[k];
    fit.iterations = std::max(fit.iterations, r.iterations);
    fit.converged = fit.converged && r.converged;
    fit.fisher_fallback = fit.fisher_fallback || r.fisher_fallback;
    fit.panel_iterations.push_back(r.iterations);
    fit.panel_converged.push_back(r.converged);
  }

  const std::vector<PanelDataset> opt_data = optimization_datasets(datasets, options);
  fit.loglik_trace.push_back(joint_log_likelihood(nonstat_spec, start, opt_data));
  fit.surrogate_loglik = joint_log_likelihood(nonstat_spec, fit.params(), opt_data);
  fit.loglik_trace.push_back(fit.surrogate_loglik);
  fit.exact_loglik = joint_log_likelihood(nonstat_spec, fit.params(), datasets);
  return fit;
}

double aic(int dim, double loglik) { return 2.0 * dim - 2.0 * loglik; }

SelectionTable model_selection(const std::vector<ModelSpec>& specs,
                               const std::vector<PanelDataset>& datasets,
                               const FitOptions& options) {
  if (specs.empty()) throw std::invalid_argument("model_selection: no candidate specs");
  SelectionTable table;
  std::map<std::pair<OperatorKind, NoiseKind>, FitResult> stationary_cache;

  std::function<const FitResult&(const ModelSpec&)> stationary_fit_for =
      [&](const ModelSpec& spec) -> const FitResult& {
    const auto key = std::make_pair(spec.operator_kind, spec.noise_kind);
    auto it = stationary_cache.find(key);
    if (it == stationary_cache.end()) {
      FitResult fit =
          natural_gradient_fit(spec, ParamVector::default_start(spec), datasets, options);
      if (spec.anisotropic()) {
        // warm start from the nested isotropic optimum (h = 1): from there
        // accepted steps can only improve on the isotropic likelihood
        ModelSpec iso = spec;
        iso.operator_kind = OperatorKind::IsoStationary;
        const FitResult& iso_fit = stationary_fit_for(iso);
        const ParamLayout iso_l = param_layout(iso);
        const ParamLayout l = param_layout(spec);
        Eigen::VectorXd warm = Eigen::VectorXd::Zero(l.total);
        warm[l.tau_d] = iso_fit.theta[iso_l.tau_d];
        warm[l.tau_o] = iso_fit.theta[iso_l.tau_o];
        warm[l.eta_d] = iso_fit.theta[iso_l.eta_d];
        warm[l.eta_o] = iso_fit.theta[iso_l.eta_o];
        if (l.eta_noise >= 0) warm[l.eta_noise] = iso_fit.theta[iso_l.eta_noise];
        if (l.theta_osc >= 0) warm[l.theta_osc] = iso_fit.theta[iso_l.theta_osc];
        FitResult warm_fit =
            natural_gradient_fit(spec, ParamVector(spec, warm), datasets, options);
        if (warm_fit.exact_loglik > fit.exact_loglik) fit = std::move(warm_fit);
      }
      it = stationary_cache.emplace(key, std::move(fit)).first;
    }
    return it->second;
  };

  for (const ModelSpec& spec : specs) {
    SelectionRow row;
    row.spec = spec;
    try {
      row.n_params = param_count(spec);
      if (spec.nonstationary()) {
        ModelSpec stat = spec.stationary_counterpart();
        row.fit = two_stage_fit(spec, stationary_fit_for(stat), datasets, options);
      } else {
        row.fit = stationary_fit_for(spec);
      }
      row.surrogate_loglik = row.fit.surrogate_loglik;
      row.exact_loglik = row.fit.exact_loglik;
      row.aic_value = aic(row.n_params, row.exact_loglik);
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }

  for (size_t i = 0; i < table.rows.size(); ++i) {
    if (!table.rows[i].ok) continue;
    if (table.winner < 0 || table.rows[i].aic_value < table.rows[table.winner].aic_value)
      table.winner = static_cast<int>(i);
  }
  return table;
}

}  // namespace spde
