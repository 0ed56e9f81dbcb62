#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>

#include "spde/mesh.hpp"

namespace spde {

/// Orthotropic diffusion tensor H = diag(h1, h1, h2): h1 weights the in-plane
/// directions, h2 the printing direction z. Must be positive definite.
struct DiffusionTensor {
  double h1 = 1.0;
  double h2 = 1.0;
};

struct LocalMatrices {
  Eigen::Matrix3d mass;             // |T|/12 * [[2,1,1],[1,2,1],[1,1,2]]
  Eigen::Vector3d lumped;           // |T|/3 per vertex
  Eigen::Matrix3d stiffness;        // (1/4|T|) E^T E
  Eigen::Matrix3d aniso_stiffness;  // (1/4|T|) E^T adj(H) E
};

/// Per-triangle element matrices with edges e_i = v_k - v_j, e_j = v_i - v_k,
/// e_k = v_j - v_i and adj(H) = det(H) H^{-1}. Throws DegenerateElementError
/// on a zero-area triangle.
LocalMatrices local_matrices(const std::array<Eigen::Vector3d, 3>& tri,
                             const DiffusionTensor& H = {});

/// Assembled global matrices. Stiffness splits into an in-plane and an axial
/// part so that the anisotropic stiffness for any H is the exact linear
/// combination h1*h2 * G_inplane + h1^2 * G_axial (adj(diag(h1,h1,h2)) =
/// diag(h1 h2, h1 h2, h1^2)).
struct FemMatrices {
  int n = 0;
  Eigen::SparseMatrix<double> C;          // consistent mass
  Eigen::VectorXd C_lumped;               // lumped mass diagonal
  Eigen::SparseMatrix<double> G;          // stiffness, H = I
  Eigen::SparseMatrix<double> G_aniso;    // stiffness for the H given at assembly
  Eigen::SparseMatrix<double> G_inplane;
  Eigen::SparseMatrix<double> G_axial;
  DiffusionTensor H;

  Eigen::SparseMatrix<double> aniso_stiffness(double h1, double h2) const;
};

/// Sums per-triangle contributions into global sparse matrices. Entries are
/// accumulated in a sorted order so the result does not depend on the
/// ordering of the triangle list.
FemMatrices assemble(const TriangleMesh& mesh, const DiffusionTensor& H = {});

}  // namespace spde
