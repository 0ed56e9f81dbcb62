#include "spde/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "spde/errors.hpp"

namespace spde {

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

double total_area(const TriangleMesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles)
    area += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
  return area;
}

TriangleMesh grid_panel_mesh(int nx, int ny, double spacing) {
  if (nx < 2 || ny < 2)
    throw std::invalid_argument("grid_panel_mesh: nx and ny must each be >= 2");
  if (!(spacing > 0.0))
    throw std::invalid_argument("grid_panel_mesh: spacing must be positive");

  TriangleMesh m;
  m.vertices.reserve(static_cast<size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      m.vertices.emplace_back(ix * spacing, 0.0, iy * spacing);

  m.triangles.reserve(2u * (nx - 1) * (ny - 1));
  auto vid = [nx](int ix, int iy) { return iy * nx + ix; };
  for (int iy = 0; iy + 1 < ny; ++iy) {
    for (int ix = 0; ix + 1 < nx; ++ix) {
      const int a = vid(ix, iy), b = vid(ix + 1, iy);
      const int c = vid(ix, iy + 1), d = vid(ix + 1, iy + 1);
      // diagonal a-d, lower-left to upper-right
      m.triangles.push_back({a, b, d});
      m.triangles.push_back({a, d, c});
    }
  }

  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      if (ix == 0 || iy == 0 || ix == nx - 1 || iy == ny - 1)
        m.boundary_vertices.push_back(vid(ix, iy));
  std::sort(m.boundary_vertices.begin(), m.boundary_vertices.end());
  return m;
}

CylinderMesh cylinder_mesh(double radius, double length, int n_theta, int n_z,
                           double pad_fraction) {
  if (n_theta < 3)
    throw std::invalid_argument("cylinder_mesh: n_theta must be >= 3");
  if (n_z < 2)
    throw std::invalid_argument("cylinder_mesh: n_z must be >= 2");
  if (!(radius > 0.0) || !(length > 0.0))
    throw std::invalid_argument("cylinder_mesh: radius and length must be positive");
  if (pad_fraction < 0.0)
    throw std::invalid_argument("cylinder_mesh: pad_fraction must be >= 0");

  const double extent = length * (1.0 + 2.0 * pad_fraction);
  const double dz = extent / (n_z - 1);
  const double dtheta = 2.0 * M_PI / n_theta;

  CylinderMesh out;
  TriangleMesh& m = out.mesh;
  m.vertices.reserve(static_cast<size_t>(n_theta) * n_z);
  for (int k = 0; k < n_z; ++k) {
    const double z = k * dz;
    for (int j = 0; j < n_theta; ++j) {
      const double th = j * dtheta;
      m.vertices.emplace_back(radius * std::cos(th), radius * std::sin(th), z);
    }
  }

  auto vid = [n_theta](int j, int k) { return k * n_theta + j; };
  m.triangles.reserve(2u * n_theta * (n_z - 1));
  for (int k = 0; k + 1 < n_z; ++k) {
    for (int j = 0; j < n_theta; ++j) {
      const int jn = (j + 1) % n_theta;
      const int a = vid(j, k), b = vid(jn, k);
      const int c = vid(j, k + 1), d = vid(jn, k + 1);
      m.triangles.push_back({a, b, d});
      m.triangles.push_back({a, d, c});
    }
  }

  for (int j = 0; j < n_theta; ++j) {
    m.boundary_vertices.push_back(vid(j, 0));
    m.boundary_vertices.push_back(vid(j, n_z - 1));
  }
  std::sort(m.boundary_vertices.begin(), m.boundary_vertices.end());

  for (int k = 0; k < n_z; ++k)
    m.periodic_pairs.emplace_back(vid(0, k), vid(n_theta - 1, k));

  const double lo = pad_fraction * length - 1e-9 * extent;
  const double hi = pad_fraction * length + length + 1e-9 * extent;
  for (int i = 0; i < m.vertex_count(); ++i)
    if (m.vertices[i].z() >= lo && m.vertices[i].z() <= hi)
      out.central_window.push_back(i);
  return out;
}

namespace {

// Undirected edge -> number of adjacent triangles.
std::map<std::pair<int, int>, int> edge_counts(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      int u = t[e], v = t[(e + 1) % 3];
      if (u > v) std::swap(u, v);
      ++counts[{u, v}];
    }
  }
  return counts;
}

}  // namespace

MeshDiagnostics validate(const TriangleMesh& mesh) {
  MeshDiagnostics d;
  const int nv = mesh.vertex_count();

  double scale = 0.0;
  for (const auto& v : mesh.vertices) scale = std::max(scale, v.cwiseAbs().maxCoeff());
  const double area_tol = 1e-14 * std::max(1.0, scale * scale);

  bool indices_ok = true;
  for (int i = 0; i < mesh.triangle_count(); ++i) {
    const auto& t = mesh.triangles[i];
    if (t[0] < 0 || t[1] < 0 || t[2] < 0 || t[0] >= nv || t[1] >= nv || t[2] >= nv) {
      d.issues.push_back("triangle " + std::to_string(i) + ": vertex index out of range");
      indices_ok = false;
      continue;
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      d.issues.push_back("degenerate triangle " + std::to_string(i) + ": repeated vertex index");
      continue;
    }
    if (triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) <= area_tol)
      d.issues.push_back("degenerate triangle " + std::to_string(i) + ": zero area");
  }
  if (!indices_ok) return d;

  const auto counts = edge_counts(mesh);
  std::set<int> derived_boundary;
  for (const auto& [edge, n] : counts) {
    if (n > 2)
      d.issues.push_back("non-manifold edge (" + std::to_string(edge.first) + "," +
                         std::to_string(edge.second) + ") shared by " + std::to_string(n) +
                         " triangles");
    if (n == 1) {
      derived_boundary.insert(edge.first);
      derived_boundary.insert(edge.second);
    }
  }

  std::set<int> declared(mesh.boundary_vertices.begin(), mesh.boundary_vertices.end());
  if (declared != derived_boundary)
    d.issues.push_back("boundary_vertices does not match the set derived from edge incidence");

  for (const auto& [a, b] : mesh.periodic_pairs)
    if (a < 0 || b < 0 || a >= nv || b >= nv)
      d.issues.push_back("periodic pair with vertex index out of range");
  return d;
}

void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path,
               const std::vector<int>* central_window) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mesh: cannot open " + path.string());
  out << "spde-mesh v1 " << mesh.vertex_count() << " " << mesh.triangle_count() << "\n";
  char buf[96];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& t : mesh.triangles) out << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!mesh.boundary_vertices.empty()) {
    out << "boundary:";
    for (int i : mesh.boundary_vertices) out << " " << i;
    out << "\n";
  }
  if (!mesh.periodic_pairs.empty()) {
    out << "periodic:";
    for (const auto& [a, b] : mesh.periodic_pairs) out << " " << a << " " << b;
    out << "\n";
  }
  if (central_window && !central_window->empty()) {
    out << "window:";
    for (int i : *central_window) out << " " << i;
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_mesh: write failed for " + path.string());
}

TriangleMesh load_mesh(const std::filesystem::path& path, std::vector<int>* central_window) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mesh: cannot open " + path.string());
  std::string line;
  int lineno = 0;

  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line()) throw ParseError("load_mesh: empty file", 1);
  std::istringstream header(line);
  std::string magic, version;
  int nv = 0, nt = 0;
  if (!(header >> magic >> version >> nv >> nt) || magic != "spde-mesh" || version != "v1")
    throw ParseError("load_mesh: bad header, expected 'spde-mesh v1 <nv> <nt>'", lineno);
  if (nv < 0 || nt < 0) throw ParseError("load_mesh: negative counts", lineno);

  TriangleMesh m;
  m.vertices.reserve(nv);
  for (int i = 0; i < nv; ++i) {
    if (!next_line()) throw ParseError("load_mesh: unexpected end of file in vertices", lineno + 1);
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw ParseError("load_mesh: bad vertex line", lineno);
    m.vertices.emplace_back(x, y, z);
  }
  m.triangles.reserve(nt);
  for (int i = 0; i < nt; ++i) {
    if (!next_line()) throw ParseError("load_mesh: unexpected end of file in triangles", lineno + 1);
    std::istringstream ss(line);
    int a, b, c;
    if (!(ss >> a >> b >> c)) throw ParseError("load_mesh: bad triangle line", lineno);
    if (a < 0 || b < 0 || c < 0 || a >= nv || b >= nv || c >= nv)
      throw ParseError("load_mesh: triangle index out of range", lineno);
    m.triangles.push_back({a, b, c});
  }

  while (next_line()) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "boundary:") {
      int i;
      while (ss >> i) {
        if (i < 0 || i >= nv) throw ParseError("load_mesh: boundary index out of range", lineno);
        m.boundary_vertices.push_back(i);
      }
    } else if (tag == "periodic:") {
      int a, b;
      while (ss >> a >> b) {
        if (a < 0 || b < 0 || a >= nv || b >= nv)
          throw ParseError("load_mesh: periodic index out of range", lineno);
        m.periodic_pairs.emplace_back(a, b);
      }
    } else if (tag == "window:") {
      int i;
      while (ss >> i) {
        if (i < 0 || i >= nv) throw ParseError("load_mesh: window index out of range", lineno);
        if (central_window) central_window->push_back(i);
      }
    } else {
      throw ParseError("load_mesh: unknown section '" + tag + "'", lineno);
    }
  }
  return m;
}

}  // namespace spde
