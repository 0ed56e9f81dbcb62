#include "spde/model.hpp"

#include <cmath>
#include <stdexcept>

#include "spde/errors.hpp"

namespace spde {

namespace {

constexpr double kProfileFloor = 1e-6;
// exp(745) overflows to inf, so the logistic hits 0 exactly at the low clamp
constexpr double kLogitClamp = 745.0;

Eigen::SparseMatrix<double> sparse_diag(const Eigen::VectorXd& d) {
  const int n = static_cast<int>(d.size());
  Eigen::SparseMatrix<double> m(n, n);
  m.reserve(Eigen::VectorXi::Constant(n, 1));
  for (int i = 0; i < n; ++i) m.insert(i, i) = d[i];
  m.makeCompressed();
  return m;
}

Eigen::SparseMatrix<double> symmetrize(const Eigen::SparseMatrix<double>& m) {
  Eigen::SparseMatrix<double> mt = m.transpose();
  return 0.5 * (m + mt);
}

// X + X^T; equals the pair of transposed chain-rule terms exactly.
Eigen::SparseMatrix<double> sym2(const Eigen::SparseMatrix<double>& m) {
  Eigen::SparseMatrix<double> mt = m.transpose();
  return m + mt;
}

}  // namespace

ModelSpec ModelSpec::stationary_counterpart() const {
  ModelSpec s = *this;
  s.operator_kind = anisotropic() ? OperatorKind::AnisoStationary : OperatorKind::IsoStationary;
  return s;
}

std::string to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::IsoStationary: return "iso_stat";
    case OperatorKind::AnisoStationary: return "aniso_stat";
    case OperatorKind::IsoNonstationary: return "iso_nonstat";
    case OperatorKind::AnisoNonstationary: return "aniso_nonstat";
  }
  return "?";
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return "white";
    case NoiseKind::Smoother: return "smoother";
    case NoiseKind::Oscillatory: return "oscillatory";
  }
  return "?";
}

OperatorKind operator_kind_from_string(const std::string& s) {
  if (s == "iso_stat") return OperatorKind::IsoStationary;
  if (s == "aniso_stat") return OperatorKind::AnisoStationary;
  if (s == "iso_nonstat") return OperatorKind::IsoNonstationary;
  if (s == "aniso_nonstat") return OperatorKind::AnisoNonstationary;
  throw std::invalid_argument("unknown operator kind: " + s);
}

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white") return NoiseKind::White;
  if (s == "smoother") return NoiseKind::Smoother;
  if (s == "oscillatory" || s == "sm_oscil") return NoiseKind::Oscillatory;
  throw std::invalid_argument("unknown noise kind: " + s);
}

int param_count(const ModelSpec& spec) {
  if (spec.n_panels < 1) throw std::invalid_argument("param_count: n_panels must be >= 1");
  int count = spec.anisotropic() ? 6 : 4;
  if (spec.nonstationary()) count += 16 * spec.n_panels;
  switch (spec.noise_kind) {
    case NoiseKind::White: break;
    case NoiseKind::Smoother: count += 1; break;
    case NoiseKind::Oscillatory: count += 2; break;
  }
  return count;
}

double profile_basis(int k, double x3) {
  const int i = k / 2 + 1;  // frequency 1..4
  const int j = k % 2;      // phase 0 or pi/4
  return std::sin(2.0 * M_PI * i * x3 / 100.0 + j * M_PI / 4.0);
}

double nonstationary_profile(const std::array<double, 8>& coeffs, double x3) {
  double sum = 0.0;
  for (int k = 0; k < 8; ++k) sum += coeffs[k] * profile_basis(k, x3);
  return 1.0 + sum;
}

ParamLayout param_layout(const ModelSpec& spec) {
  ParamLayout l;
  int next = 4;
  if (spec.anisotropic()) {
    l.h1 = next++;
    l.h2 = next++;
  }
  if (spec.nonstationary()) {
    l.gamma_block = next;
    next += 16 * spec.n_panels;
  }
  if (spec.noise_kind != NoiseKind::White) l.eta_noise = next++;
  if (spec.noise_kind == NoiseKind::Oscillatory) l.theta_osc = next++;
  l.total = next;
  return l;
}

ParamVector::ParamVector(const ModelSpec& spec, Eigen::VectorXd flat)
    : spec_(spec), layout_(param_layout(spec)), flat_(std::move(flat)) {
  if (flat_.size() != layout_.total)
    throw std::invalid_argument("ParamVector: flat vector has dimension " +
                                std::to_string(flat_.size()) + ", expected " +
                                std::to_string(layout_.total));
  if (!flat_.allFinite()) throw InvalidParameterError("ParamVector: non-finite entries");
}

double ParamVector::theta_osc() const {
  if (layout_.theta_osc < 0) return 0.0;
  return 1.0 / (1.0 + std::exp(-flat_[layout_.theta_osc]));
}

std::array<double, 8> ParamVector::gamma_tau(int panel) const {
  std::array<double, 8> g{};
  if (layout_.gamma_block < 0) return g;
  for (int k = 0; k < 8; ++k) g[k] = flat_[layout_.gamma_tau_start(panel) + k];
  return g;
}

std::array<double, 8> ParamVector::gamma_eta(int panel) const {
  std::array<double, 8> g{};
  if (layout_.gamma_block < 0) return g;
  for (int k = 0; k < 8; ++k) g[k] = flat_[layout_.gamma_eta_start(panel) + k];
  return g;
}

double ParamVector::jacobian(int i) const {
  if (layout_.gamma_block >= 0 && i >= layout_.gamma_block &&
      i < layout_.gamma_block + 16 * spec_.n_panels)
    return 1.0;  // identity transform
  if (i == layout_.theta_osc) {
    const double t = theta_osc();
    return t * (1.0 - t);
  }
  return std::exp(flat_[i]);  // log transform
}

ParamVector ParamVector::from_named(const ModelSpec& spec, const Named& named) {
  auto check_positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw InvalidParameterError(std::string(name) + " must be strictly positive");
    return std::log(v);
  };
  const ParamLayout layout = param_layout(spec);
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(layout.total);
  flat[layout.tau_d] = check_positive(named.tau_d, "tau_d");
  flat[layout.tau_o] = check_positive(named.tau_o, "tau_o");
  flat[layout.eta_d] = check_positive(named.eta_d, "eta_d");
  flat[layout.eta_o] = check_positive(named.eta_o, "eta_o");
  if (spec.anisotropic()) {
    flat[layout.h1] = check_positive(named.h1, "h1");
    flat[layout.h2] = check_positive(named.h2, "h2");
  }
  if (spec.nonstationary()) {
    auto block = [&](const std::vector<std::array<double, 8>>& src, int start, int panel) {
      if (!src.empty()) {
        if (static_cast<int>(src.size()) != spec.n_panels)
          throw InvalidParameterError("gamma blocks must cover every panel");
        for (int k = 0; k < 8; ++k) flat[start + k] = src[panel][k];
      }
    };
    for (int p = 0; p < spec.n_panels; ++p) {
      block(named.gamma_tau, layout.gamma_tau_start(p), p);
      block(named.gamma_eta, layout.gamma_eta_start(p), p);
    }
  }
  if (spec.noise_kind != NoiseKind::White)
    flat[layout.eta_noise] = check_positive(named.eta_noise, "eta_noise");
  if (spec.noise_kind == NoiseKind::Oscillatory) {
    if (!(named.theta_osc >= 0.0 && named.theta_osc < 1.0))
      throw InvalidParameterError("theta_osc must lie in [0, 1)");
    double logit = named.theta_osc <= 0.0
                       ? -kLogitClamp
                       : std::log(named.theta_osc / (1.0 - named.theta_osc));
    flat[layout.theta_osc] = std::clamp(logit, -kLogitClamp, kLogitClamp);
  }
  return ParamVector(spec, std::move(flat));
}

ParamVector ParamVector::default_start(const ModelSpec& spec) {
  // Equal diagonal and off-diagonal couplings make the operator matrix
  // exactly singular, so the off-diagonal defaults start at half strength.
  Named named;
  named.tau_o = 0.5;
  named.eta_o = 0.5;
  named.theta_osc = 0.5;
  return from_named(spec, named);
}

ParamVector::Named ParamVector::to_named() const {
  Named n;
  n.tau_d = tau_d();
  n.tau_o = tau_o();
  n.eta_d = eta_d();
  n.eta_o = eta_o();
  n.h1 = h1();
  n.h2 = h2();
  n.eta_noise = eta_noise();
  n.theta_osc = theta_osc();
  if (spec_.nonstationary()) {
    for (int p = 0; p < spec_.n_panels; ++p) {
      n.gamma_tau.push_back(gamma_tau(p));
      n.gamma_eta.push_back(gamma_eta(p));
    }
  }
  return n;
}

namespace {

// Per-vertex diagonal coefficients of one operator block. For stationary
// variants the profiles are identically one.
struct BlockCoefficients {
  Eigen::VectorXd tau;  // tau^(rs)(x3_i)
  Eigen::VectorXd eta;  // eta^(rs)(x3_i)
};

Eigen::VectorXd profile_vector(const std::array<double, 8>& coeffs, const TriangleMesh& mesh,
                               const char* which) {
  const int n = mesh.vertex_count();
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = nonstationary_profile(coeffs, mesh.vertices[i].z());
    if (v[i] <= kProfileFloor)
      throw InvalidParameterError(std::string("nonstationary ") + which +
                                  " profile is not positive at a mesh vertex");
  }
  return v;
}

BlockCoefficients block_coefficients(const ModelSpec& spec, const ParamVector& params,
                                     const TriangleMesh& mesh, bool diagonal_block, int panel) {
  const int n = mesh.vertex_count();
  const double tau_c = diagonal_block ? params.tau_d() : params.tau_o();
  const double eta_c = diagonal_block ? params.eta_d() : params.eta_o();
  BlockCoefficients bc;
  if (spec.nonstationary()) {
    bc.tau = tau_c * profile_vector(params.gamma_tau(panel), mesh, "tau");
    bc.eta = eta_c * profile_vector(params.gamma_eta(panel), mesh, "eta");
  } else {
    bc.tau = Eigen::VectorXd::Constant(n, tau_c);
    bc.eta = Eigen::VectorXd::Constant(n, eta_c);
  }
  return bc;
}

Eigen::SparseMatrix<double> operator_stiffness(const ModelSpec& spec, const ParamVector& params,
                                               const FemMatrices& fem) {
  return spec.anisotropic() ? fem.aniso_stiffness(params.h1(), params.h2()) : fem.G;
}

}  // namespace

Eigen::SparseMatrix<double> operator_block(const ModelSpec& spec, const ParamVector& params,
                                           const FemMatrices& fem, const TriangleMesh& mesh,
                                           int r, int s, int panel) {
  if (r < 1 || r > 2 || s < 1 || s > 2)
    throw std::invalid_argument("operator_block: r and s must be 1 or 2");
  if (fem.n != mesh.vertex_count())
    throw std::invalid_argument("operator_block: mesh and FEM dimensions differ");
  const BlockCoefficients bc = block_coefficients(spec, params, mesh, r == s, panel);
  Eigen::SparseMatrix<double> core =
      operator_stiffness(spec, params, fem) +
      sparse_diag((bc.eta.array() * fem.C_lumped.array()).matrix());
  return bc.tau.asDiagonal() * core;
}

Eigen::SparseMatrix<double> noise_block(const ModelSpec& spec, const ParamVector& params,
                                        const FemMatrices& fem) {
  if (spec.noise_kind == NoiseKind::White)
    return sparse_diag(fem.C_lumped.cwiseInverse());

  const double eta = params.eta_noise();
  const double c = spec.noise_kind == NoiseKind::Smoother ? 1.0
                                                          : std::cos(M_PI * params.theta_osc());
  const Eigen::SparseMatrix<double> Gt = operator_stiffness(spec, params, fem);
  const Eigen::VectorXd inv_cl = fem.C_lumped.cwiseInverse();
  Eigen::SparseMatrix<double> quad = Gt * inv_cl.asDiagonal() * Gt;
  Eigen::SparseMatrix<double> N =
      quad + (2.0 * eta * c) * Gt + sparse_diag((eta * eta) * fem.C_lumped);
  return symmetrize(N);
}

Eigen::SparseMatrix<double> noise_precision(const ModelSpec& spec, const ParamVector& params,
                                            const FemMatrices& fem) {
  const Eigen::SparseMatrix<double> N = noise_block(spec, params, fem);
  const int n = fem.n;
  Eigen::SparseMatrix<double> full(2 * n, 2 * n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * N.nonZeros());
  for (int col = 0; col < n; ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(N, col); it; ++it) {
      trips.emplace_back(it.row(), col, it.value());
      trips.emplace_back(n + it.row(), n + col, it.value());
    }
  full.setFromTriplets(trips.begin(), trips.end());
  return full;
}

namespace {

// Places symmetric n x n blocks into [[Q11, Q12], [Q12, Q11]].
Eigen::SparseMatrix<double> assemble_2x2(const Eigen::SparseMatrix<double>& Q11,
                                         const Eigen::SparseMatrix<double>& Q12) {
  const int n = Q11.rows();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * (Q11.nonZeros() + Q12.nonZeros()));
  for (int col = 0; col < n; ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(Q11, col); it; ++it) {
      trips.emplace_back(it.row(), col, it.value());
      trips.emplace_back(n + it.row(), n + col, it.value());
    }
    for (Eigen::SparseMatrix<double>::InnerIterator it(Q12, col); it; ++it) {
      trips.emplace_back(it.row(), n + col, it.value());
      trips.emplace_back(n + it.row(), col, it.value());
    }
  }
  Eigen::SparseMatrix<double> Q(2 * n, 2 * n);
  Q.setFromTriplets(trips.begin(), trips.end());
  return Q;
}

// Derivative of one operator block: dK = dT (diag(E. * cl) + G~) + T (diag(dE . * cl) + dG~).
// Zero-size vectors/matrices mean "no dependence".
Eigen::SparseMatrix<double> block_derivative(
    const Eigen::VectorXd& tau, const Eigen::SparseMatrix<double>& core,
    const Eigen::VectorXd& dtau, const Eigen::VectorXd& deta_times_cl,
    const Eigen::SparseMatrix<double>& dG, int n) {
  Eigen::SparseMatrix<double> dK(n, n);
  if (dtau.size()) dK = dtau.asDiagonal() * core;
  Eigen::SparseMatrix<double> inner(n, n);
  bool has_inner = false;
  if (deta_times_cl.size()) {
    inner = sparse_diag(deta_times_cl);
    has_inner = true;
  }
  if (dG.nonZeros()) {
    inner = has_inner ? Eigen::SparseMatrix<double>(inner + dG) : dG;
    has_inner = true;
  }
  if (has_inner) {
    Eigen::SparseMatrix<double> t = tau.asDiagonal() * inner;
    dK = dK.nonZeros() ? Eigen::SparseMatrix<double>(dK + t) : t;
  }
  return dK;
}

}  // namespace

PrecisionModel build_precision(const ModelSpec& spec, const ParamVector& params,
                               const FemMatrices& fem, const TriangleMesh& mesh, int panel,
                               bool with_derivatives) {
  const int n = fem.n;
  const ParamLayout& layout = params.layout();
  if (panel < 0 || panel >= spec.n_panels)
    throw std::invalid_argument("build_precision: panel index out of range");

  const BlockCoefficients bcd = block_coefficients(spec, params, mesh, true, panel);
  const BlockCoefficients bco = block_coefficients(spec, params, mesh, false, panel);
  const Eigen::SparseMatrix<double> Gt = operator_stiffness(spec, params, fem);

  const Eigen::SparseMatrix<double> core_d =
      Gt + sparse_diag((bcd.eta.array() * fem.C_lumped.array()).matrix());
  const Eigen::SparseMatrix<double> core_o =
      Gt + sparse_diag((bco.eta.array() * fem.C_lumped.array()).matrix());
  const Eigen::SparseMatrix<double> A = bcd.tau.asDiagonal() * core_d;
  const Eigen::SparseMatrix<double> B = bco.tau.asDiagonal() * core_o;
  const Eigen::SparseMatrix<double> N = noise_block(spec, params, fem);

  const Eigen::SparseMatrix<double> NA = N * A;
  const Eigen::SparseMatrix<double> NB = N * B;
  const Eigen::SparseMatrix<double> At = A.transpose();
  const Eigen::SparseMatrix<double> Bt = B.transpose();

  PrecisionModel out;
  const Eigen::SparseMatrix<double> Q11 = symmetrize(At * NA + Bt * NB);
  const Eigen::SparseMatrix<double> Q12 = sym2(At * NB);  // A^T N B + B^T N A
  out.Q = assemble_2x2(Q11, Q12);

  if (!with_derivatives) return out;

  // Active parameters for this panel: everything except other panels' gammas.
  std::vector<int> active;
  for (int i = 0; i < layout.total; ++i) {
    if (layout.gamma_block >= 0 && i >= layout.gamma_block &&
        i < layout.gamma_block + 16 * spec.n_panels) {
      const int p = (i - layout.gamma_block) / 16;
      if (p != panel) continue;
    }
    active.push_back(i);
  }
  out.active = active;
  out.dQ.assign(layout.total, Eigen::SparseMatrix<double>(2 * n, 2 * n));

  const double eta_n = params.eta_noise();
  const double theta = params.theta_osc();
  const double cos_t = spec.noise_kind == NoiseKind::Smoother ? 1.0 : std::cos(M_PI * theta);
  const Eigen::VectorXd inv_cl = fem.C_lumped.cwiseInverse();

  // dG~/dh derivative directions (anisotropic only)
  Eigen::SparseMatrix<double> dG_h1, dG_h2;
  if (spec.anisotropic()) {
    const double h1 = params.h1(), h2 = params.h2();
    dG_h1 = h2 * fem.G_inplane + 2.0 * h1 * fem.G_axial;
    dG_h2 = h1 * fem.G_inplane;
  }

  const Eigen::VectorXd empty_vec;
  const Eigen::SparseMatrix<double> empty_mat(n, n);

  // Profile vectors for nonstationary derivatives.
  Eigen::VectorXd prof_tau, prof_eta;
  if (spec.nonstationary()) {
    prof_tau = bcd.tau / params.tau_d();  // the shared profile, c factored out
    prof_eta = bcd.eta / params.eta_d();
  }

  for (int i : active) {
    // Natural-coordinate derivative pieces for parameter i.
    Eigen::SparseMatrix<double> dA(n, n), dB(n, n), dN(n, n);

    if (i == layout.tau_d) {
      dA = block_derivative(bcd.tau, core_d,
                            spec.nonstationary() ? prof_tau : Eigen::VectorXd::Ones(n),
                            empty_vec, empty_mat, n);
    } else if (i == layout.tau_o) {
      dB = block_derivative(bco.tau, core_o,
                            spec.nonstationary() ? prof_tau : Eigen::VectorXd::Ones(n),
                            empty_vec, empty_mat, n);
    } else if (i == layout.eta_d) {
      const Eigen::VectorXd de =
          spec.nonstationary()
              ? (prof_eta.array() * fem.C_lumped.array()).matrix().eval()
              : fem.C_lumped;
      dA = block_derivative(bcd.tau, core_d, empty_vec, de, empty_mat, n);
    } else if (i == layout.eta_o) {
      const Eigen::VectorXd de =
          spec.nonstationary()
              ? (prof_eta.array() * fem.C_lumped.array()).matrix().eval()
              : fem.C_lumped;
      dB = block_derivative(bco.tau, core_o, empty_vec, de, empty_mat, n);
    } else if (i == layout.h1 || i == layout.h2) {
      const Eigen::SparseMatrix<double>& dG = (i == layout.h1) ? dG_h1 : dG_h2;
      dA = block_derivative(bcd.tau, core_d, empty_vec, empty_vec, dG, n);
      dB = block_derivative(bco.tau, core_o, empty_vec, empty_vec, dG, n);
      if (spec.noise_kind != NoiseKind::White) {
        Eigen::SparseMatrix<double> cross = dG * inv_cl.asDiagonal() * Gt;
        dN = sym2(cross) + (2.0 * eta_n * cos_t) * dG;
      }
    } else if (i == layout.eta_noise) {
      dN = (2.0 * cos_t) * Gt + sparse_diag(2.0 * eta_n * fem.C_lumped);
    } else if (i == layout.theta_osc) {
      dN = (-2.0 * M_PI * eta_n * std::sin(M_PI * theta)) * Gt;
    } else {
      // Fourier coefficient of this panel.
      const int offset = i - layout.gamma_tau_start(panel);
      const bool is_tau = offset < 8;
      const int k = is_tau ? offset : offset - 8;
      Eigen::VectorXd basis(n);
      for (int v = 0; v < n; ++v) basis[v] = profile_basis(k, mesh.vertices[v].z());
      if (is_tau) {
        dA = block_derivative(bcd.tau, core_d, params.tau_d() * basis, empty_vec, empty_mat, n);
        dB = block_derivative(bco.tau, core_o, params.tau_o() * basis, empty_vec, empty_mat, n);
      } else {
        const Eigen::VectorXd base_cl = (basis.array() * fem.C_lumped.array()).matrix();
        dA = block_derivative(bcd.tau, core_d, empty_vec, params.eta_d() * base_cl, empty_mat, n);
        dB = block_derivative(bco.tau, core_o, empty_vec, params.eta_o() * base_cl, empty_mat, n);
      }
    }

    const bool has_dA = dA.nonZeros() > 0;
    const bool has_dB = dB.nonZeros() > 0;
    const bool has_dN = dN.nonZeros() > 0;

    Eigen::SparseMatrix<double> dQ11(n, n), dQ12(n, n);
    if (has_dA) {
      dQ11 = sym2(At * (N * dA));
      dQ12 = sym2(Bt * (N * dA));
    }
    if (has_dB) {
      Eigen::SparseMatrix<double> t11 = sym2(Bt * (N * dB));
      Eigen::SparseMatrix<double> t12 = sym2(At * (N * dB));
      dQ11 = dQ11.nonZeros() ? Eigen::SparseMatrix<double>(dQ11 + t11) : t11;
      dQ12 = dQ12.nonZeros() ? Eigen::SparseMatrix<double>(dQ12 + t12) : t12;
    }
    if (has_dN) {
      Eigen::SparseMatrix<double> t11 = symmetrize(At * (dN * A) + Bt * (dN * B));
      Eigen::SparseMatrix<double> t12 = sym2(At * (dN * B));
      dQ11 = dQ11.nonZeros() ? Eigen::SparseMatrix<double>(dQ11 + t11) : t11;
      dQ12 = dQ12.nonZeros() ? Eigen::SparseMatrix<double>(dQ12 + t12) : t12;
    }

    const double jac = params.jacobian(i);
    if (dQ11.nonZeros() || dQ12.nonZeros()) {
      if (!dQ11.nonZeros()) dQ11 = Eigen::SparseMatrix<double>(n, n);
      if (!dQ12.nonZeros()) dQ12 = Eigen::SparseMatrix<double>(n, n);
      out.dQ[i] = assemble_2x2(Eigen::SparseMatrix<double>(jac * dQ11),
                               Eigen::SparseMatrix<double>(jac * dQ12));
    }
  }
  return out;
}

}  // namespace spde
