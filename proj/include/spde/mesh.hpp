#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace spde {

/// Triangulated 2-manifold embedded in R^3. Coordinates are millimeters; the
/// printing direction is the z axis. Values are immutable after construction
/// and safe to share across threads.
struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
  // Vertices incident to an edge with exactly one adjacent triangle, sorted.
  std::vector<int> boundary_vertices;
  // Vertex pairs adjacent through an angular seam on closed meshes. The seam
  // carries no duplicated vertices; these pairs only record the closure.
  std::vector<std::pair<int, int>> periodic_pairs;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
};

struct MeshDiagnostics {
  std::vector<std::string> issues;
  bool ok() const { return issues.empty(); }
};

/// Axis-aligned grid of nx*ny vertices in the x-z plane (y = 0), split into
/// 2*(nx-1)*(ny-1) triangles along the lower-left to upper-right diagonal.
/// All four edges are boundary.
TriangleMesh grid_panel_mesh(int nx, int ny, double spacing);

struct CylinderMesh {
  TriangleMesh mesh;
  // Vertices of the central, unpadded portion (axial extent = length).
  std::vector<int> central_window;
};

/// Cylinder about the z axis with axial extent length*(1 + 2*pad_fraction),
/// closed (vertex-identified) in the angular direction so the only boundary
/// is at the two axial ends.
CylinderMesh cylinder_mesh(double radius, double length, int n_theta, int n_z,
                           double pad_fraction);

/// Reports every violated TriangleMesh invariant; an empty report means the
/// mesh is valid.
MeshDiagnostics validate(const TriangleMesh& mesh);

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c);
double total_area(const TriangleMesh& mesh);

// Text format: `spde-mesh v1 <nv> <nt>`, nv vertex lines `x y z`, nt triangle
// lines `i j k` (0-based), then optional lines `boundary: ...`,
// `periodic: i1 j1 i2 j2 ...` and `window: ...`.
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path,
               const std::vector<int>* central_window = nullptr);
TriangleMesh load_mesh(const std::filesystem::path& path,
                       std::vector<int>* central_window = nullptr);

}  // namespace spde
