#include "spde/fem.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

namespace {

struct Entry {
  int row, col;
  double value;
};

// Accumulates triplets into an n x n sparse matrix. Triplets are sorted by
// (col, row, value) before summation, so the result is bit-identical under
// any permutation of the input (equal values commute).
Eigen::SparseMatrix<double> accumulate(int n, std::vector<Entry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.col, a.row, a.value) < std::tie(b.col, b.row, b.value);
  });
  std::vector<Eigen::Triplet<double>> merged;
  merged.reserve(entries.size());
  size_t i = 0;
  while (i < entries.size()) {
    const int r = entries[i].row, c = entries[i].col;
    double sum = 0.0;
    while (i < entries.size() && entries[i].row == r && entries[i].col == c)
      sum += entries[i++].value;
    merged.emplace_back(r, c, sum);
  }
  Eigen::SparseMatrix<double> m(n, n);
  m.setFromTriplets(merged.begin(), merged.end());
  return m;
}

double checked_area(const std::array<Eigen::Vector3d, 3>& tri, int index) {
  const Eigen::Vector3d ei = tri[2] - tri[1];
  const Eigen::Vector3d ej = tri[0] - tri[2];
  const double area = 0.5 * ei.cross(ej).norm();
  const double scale = std::max({ei.squaredNorm(), ej.squaredNorm(), (tri[1] - tri[0]).squaredNorm()});
  if (!(area > 1e-12 * std::max(scale, 1e-300)))
    throw DegenerateElementError("zero-area triangle", index);
  return area;
}

}  // namespace

LocalMatrices local_matrices(const std::array<Eigen::Vector3d, 3>& tri,
                             const DiffusionTensor& H) {
  if (!(H.h1 > 0.0) || !(H.h2 > 0.0))
    throw InvalidParameterError("local_matrices: diffusion tensor must be positive definite");
  const double area = checked_area(tri, -1);

  Eigen::Matrix3d E;  // columns are the edges opposite each vertex
  E.col(0) = tri[2] - tri[1];
  E.col(1) = tri[0] - tri[2];
  E.col(2) = tri[1] - tri[0];

  LocalMatrices out;
  out.mass << 2, 1, 1, 1, 2, 1, 1, 1, 2;
  out.mass *= area / 12.0;
  out.lumped = Eigen::Vector3d::Constant(area / 3.0);
  out.stiffness = (E.transpose() * E) / (4.0 * area);
  const Eigen::Vector3d adjH(H.h1 * H.h2, H.h1 * H.h2, H.h1 * H.h1);
  out.aniso_stiffness = (E.transpose() * adjH.asDiagonal() * E) / (4.0 * area);
  return out;
}

Eigen::SparseMatrix<double> FemMatrices::aniso_stiffness(double h1, double h2) const {
  Eigen::SparseMatrix<double> result = (h1 * h2) * G_inplane + (h1 * h1) * G_axial;
  return result;
}

FemMatrices assemble(const TriangleMesh& mesh, const DiffusionTensor& H) {
  if (!(H.h1 > 0.0) || !(H.h2 > 0.0))
    throw InvalidParameterError("assemble: diffusion tensor must be positive definite");
  const int n = mesh.vertex_count();
  const int nt = mesh.triangle_count();

  std::vector<Entry> mass_e, gp_e, gz_e, lump_e;
  mass_e.reserve(9u * nt);
  gp_e.reserve(9u * nt);
  gz_e.reserve(9u * nt);
  lump_e.reserve(3u * nt);

  for (int t = 0; t < nt; ++t) {
    const auto& tv = mesh.triangles[t];
    const std::array<Eigen::Vector3d, 3> tri = {mesh.vertices[tv[0]], mesh.vertices[tv[1]],
                                                mesh.vertices[tv[2]]};
    double area;
    try {
      area = checked_area(tri, t);
    } catch (const DegenerateElementError&) {
      throw DegenerateElementError("assemble: zero-area triangle " + std::to_string(t), t);
    }

    Eigen::Matrix3d E;
    E.col(0) = tri[2] - tri[1];
    E.col(1) = tri[0] - tri[2];
    E.col(2) = tri[1] - tri[0];
    const double inv4a = 1.0 / (4.0 * area);

    for (int a = 0; a < 3; ++a) {
      lump_e.push_back({tv[a], 0, area / 3.0});
      for (int b = 0; b < 3; ++b) {
        const double mass_ab = (a == b ? 2.0 : 1.0) * area / 12.0;
        mass_e.push_back({tv[a], tv[b], mass_ab});
        const double inplane =
            (E(0, a) * E(0, b) + E(1, a) * E(1, b)) * inv4a;
        const double axial = E(2, a) * E(2, b) * inv4a;
        gp_e.push_back({tv[a], tv[b], inplane});
        gz_e.push_back({tv[a], tv[b], axial});
      }
    }
  }

  std::sort(lump_e.begin(), lump_e.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.row, a.value) < std::tie(b.row, b.value);
  });
  Eigen::VectorXd lumped = Eigen::VectorXd::Zero(n);
  for (const auto& e : lump_e) lumped[e.row] += e.value;

  FemMatrices fem;
  fem.n = n;
  fem.H = H;
  fem.C = accumulate(n, mass_e);
  fem.C_lumped = lumped;
  fem.G_inplane = accumulate(n, gp_e);
  fem.G_axial = accumulate(n, gz_e);
  fem.G = fem.aniso_stiffness(1.0, 1.0);
  fem.G_aniso = fem.aniso_stiffness(H.h1, H.h2);
  return fem;
}

}  // namespace spde
