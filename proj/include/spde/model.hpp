#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <string>
#include <vector>

#include "spde/fem.hpp"
#include "spde/mesh.hpp"

namespace spde {

enum class OperatorKind {
  IsoStationary,
  AnisoStationary,
  IsoNonstationary,
  AnisoNonstationary,
};

enum class NoiseKind { White, Smoother, Oscillatory };

/// One of the 12 model variants: a differential-operator family crossed with
/// a driving-noise family, plus the number of panels carrying random effects.
struct ModelSpec {
  OperatorKind operator_kind = OperatorKind::IsoStationary;
  NoiseKind noise_kind = NoiseKind::White;
  int n_panels = 1;

  bool anisotropic() const {
    return operator_kind == OperatorKind::AnisoStationary ||
           operator_kind == OperatorKind::AnisoNonstationary;
  }
  bool nonstationary() const {
    return operator_kind == OperatorKind::IsoNonstationary ||
           operator_kind == OperatorKind::AnisoNonstationary;
  }
  /// The stationary operator variant with the same anisotropy and noise.
  ModelSpec stationary_counterpart() const;
  bool operator==(const ModelSpec&) const = default;
};

std::string to_string(OperatorKind k);
std::string to_string(NoiseKind k);
OperatorKind operator_kind_from_string(const std::string& s);
NoiseKind noise_kind_from_string(const std::string& s);

/// Number of free parameters: 4 (6 if anisotropic) shared constants, plus
/// 16 Fourier coefficients per panel if nonstationary, plus 0/1/2 for
/// white/smoother/oscillatory noise.
int param_count(const ModelSpec& spec);

/// Low-frequency Fourier profile 1 + sum_{i=1..4, j=0,1} coeffs[2(i-1)+j] *
/// sin(2 pi i x3 / 100 + j pi / 4), x3 in millimeters.
double nonstationary_profile(const std::array<double, 8>& coeffs, double x3);
/// Basis term k = 2(i-1)+j of the profile above.
double profile_basis(int k, double x3);

/// Index bookkeeping for the flat parameter vector. Layout:
///   [tau_d, tau_o, eta_d, eta_o] (log scale; the c_ constants when
///   nonstationary), then [h1, h2] (log) if anisotropic, then per panel
///   8 gamma_tau + 8 gamma_eta (identity scale) if nonstationary, then
///   eta_noise (log) unless white, then theta_osc (logistic) if oscillatory.
struct ParamLayout {
  int total = 0;
  int tau_d = 0, tau_o = 1, eta_d = 2, eta_o = 3;
  int h1 = -1, h2 = -1;
  int gamma_block = -1;  // start of panel 0's block; 16 per panel
  int eta_noise = -1;
  int theta_osc = -1;

  int gamma_tau_start(int panel) const { return gamma_block + 16 * panel; }
  int gamma_eta_start(int panel) const { return gamma_block + 16 * panel + 8; }
};
ParamLayout param_layout(const ModelSpec& spec);

/// Model parameters. The flat vector of unconstrained (transformed)
/// coordinates is the authoritative representation; named accessors apply
/// the inverse transforms on the fly, so pack/unpack round-trips exactly.
class ParamVector {
public:
  ParamVector(const ModelSpec& spec, Eigen::VectorXd flat);

  struct Named {
    double tau_d = 1.0, tau_o = 1.0, eta_d = 1.0, eta_o = 1.0;
    double h1 = 1.0, h2 = 1.0;
    std::vector<std::array<double, 8>> gamma_tau;  // one per panel
    std::vector<std::array<double, 8>> gamma_eta;
    double eta_noise = 1.0;
    double theta_osc = 0.0;
  };
  /// Builds the flat vector from natural-scale values. Throws
  /// InvalidParameterError on nonpositive scales or theta_osc outside [0,1).
  static ParamVector from_named(const ModelSpec& spec, const Named& named);
  /// All-unit natural parameters: zeros in transformed coordinates.
  static ParamVector default_start(const ModelSpec& spec);

  Named to_named() const;

  const ModelSpec& spec() const { return spec_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  const ParamLayout& layout() const { return layout_; }
  int size() const { return layout_.total; }

  double tau_d() const { return std::exp(flat_[layout_.tau_d]); }
  double tau_o() const { return std::exp(flat_[layout_.tau_o]); }
  double eta_d() const { return std::exp(flat_[layout_.eta_d]); }
  double eta_o() const { return std::exp(flat_[layout_.eta_o]); }
  double h1() const { return layout_.h1 >= 0 ? std::exp(flat_[layout_.h1]) : 1.0; }
  double h2() const { return layout_.h2 >= 0 ? std::exp(flat_[layout_.h2]) : 1.0; }
  double eta_noise() const {
    return layout_.eta_noise >= 0 ? std::exp(flat_[layout_.eta_noise]) : 1.0;
  }
  double theta_osc() const;
  std::array<double, 8> gamma_tau(int panel) const;
  std::array<double, 8> gamma_eta(int panel) const;

  /// d(natural)/d(flat) for parameter i at the current point.
  double jacobian(int i) const;

private:
  ModelSpec spec_;
  ParamLayout layout_;
  Eigen::VectorXd flat_;
};

/// Operator block K^(rs) = tau^(rs) (eta^(rs) C_lumped + G~), with diagonal
/// tau, eta evaluated at the vertex x3 coordinates for nonstationary
/// variants and G~ the anisotropic stiffness when H is used, else G.
/// panel selects the random-effects block of a nonstationary model.
Eigen::SparseMatrix<double> operator_block(const ModelSpec& spec, const ParamVector& params,
                                           const FemMatrices& fem, const TriangleMesh& mesh,
                                           int r, int s, int panel = 0);

/// Per-surface noise precision (n x n). White: C_lumped^{-1}. Smoother and
/// oscillatory share the expanded form eta^2 C~ + 2 eta cos(pi theta) G~ +
/// G~ C~^{-1} G~ with theta = 0 for the smoother model.
Eigen::SparseMatrix<double> noise_block(const ModelSpec& spec, const ParamVector& params,
                                        const FemMatrices& fem);

/// Block-diagonal 2n x 2n noise precision; the two surface blocks are equal
/// by exchangeability.
Eigen::SparseMatrix<double> noise_precision(const ModelSpec& spec, const ParamVector& params,
                                            const FemMatrices& fem);

/// Precision of the stacked bivariate field and its parameter derivatives.
/// dQ[i] is the derivative in the transformed coordinate i (chain rule
/// applied); entries for parameters that do not touch this panel are empty.
struct PrecisionModel {
  Eigen::SparseMatrix<double> Q;
  std::vector<Eigen::SparseMatrix<double>> dQ;
  std::vector<int> active;  // indices i with a structurally nonzero dQ[i]
};

/// Q = K^T Cz^{-1} K with K the 2x2 block operator matrix and Cz^{-1} the
/// block-diagonal noise precision. Derivatives follow
///   dQ = (dK)^T Cz^{-1} K + K^T (dCz^{-1}) K + K^T Cz^{-1} (dK).
PrecisionModel build_precision(const ModelSpec& spec, const ParamVector& params,
                               const FemMatrices& fem, const TriangleMesh& mesh, int panel = 0,
                               bool with_derivatives = true);

}  // namespace spde
