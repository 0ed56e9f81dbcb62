#include "spde/data.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "spde/errors.hpp"
#include "spde/sample.hpp"

namespace spde {

PanelDataset make_grid_dataset(int nx, int ny, double spacing, Eigen::VectorXd y,
                               std::string panel_id) {
  PanelDataset d;
  auto mesh = std::make_shared<TriangleMesh>(grid_panel_mesh(nx, ny, spacing));
  d.fem = std::make_shared<FemMatrices>(assemble(*mesh));
  d.mesh = std::move(mesh);
  d.nx = nx;
  d.ny = ny;
  d.spacing = spacing;
  d.panel_id = std::move(panel_id);
  if (y.size() != 2 * d.mesh->vertex_count())
    throw std::invalid_argument("make_grid_dataset: y must have length 2 * nx * ny");
  if (!y.allFinite()) throw std::invalid_argument("make_grid_dataset: non-finite observations");
  d.y = std::move(y);
  return d;
}

PanelDataset surrogate_subset(const PanelDataset& dataset, int side) {
  if (side < 2) throw std::invalid_argument("surrogate_subset: side must be >= 2");
  if (side > dataset.nx || side > dataset.ny)
    throw std::invalid_argument("surrogate_subset: side exceeds the panel grid");
  const int offx = (dataset.nx - side) / 2;
  const int offy = (dataset.ny - side) / 2;
  const int n_full = dataset.n();
  const int n_sub = side * side;
  Eigen::VectorXd y(2 * n_sub);
  for (int jy = 0; jy < side; ++jy) {
    for (int jx = 0; jx < side; ++jx) {
      const int sub = jy * side + jx;
      const int full = (offy + jy) * dataset.nx + (offx + jx);
      y[sub] = dataset.y[full];
      y[n_sub + sub] = dataset.y[n_full + full];
    }
  }
  return make_grid_dataset(side, side, dataset.spacing, std::move(y),
                           dataset.panel_id + "/surrogate" + std::to_string(side));
}

std::vector<PanelDataset> simulate_datasets(const ModelSpec& spec, const ParamVector& params,
                                            int nx, int ny, double spacing, int n_panels,
                                            std::uint64_t seed) {
  PanelDataset proto = make_grid_dataset(nx, ny, spacing,
                                         Eigen::VectorXd::Zero(2 * nx * ny), "panel0");
  std::vector<PanelDataset> out;
  out.reserve(n_panels);
  for (int j = 0; j < n_panels; ++j) {
    const int panel = spec.nonstationary() ? j : 0;
    PrecisionModel pm = build_precision(spec, params, *proto.fem, *proto.mesh, panel, false);
    CholeskyFactor factor(pm.Q);
    FieldSample s = sample_field(factor, split_seed(seed, static_cast<std::uint64_t>(j)));
    PanelDataset d = proto;
    d.y = s.weights;
    d.panel_id = "panel" + std::to_string(j);
    out.push_back(std::move(d));
  }
  return out;
}

void save_panel_dataset(const PanelDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_panel_dataset: cannot open " + path.string());
  out << "# spde-panel v1 nx=" << dataset.nx << " ny=" << dataset.ny
      << " spacing=" << dataset.spacing << " panel=" << dataset.panel_id << "\n";
  out << "i,j,x,y,z,u1,u2\n";
  const int n = dataset.n();
  char buf[192];
  for (int jy = 0; jy < dataset.ny; ++jy) {
    for (int jx = 0; jx < dataset.nx; ++jx) {
      const int v = jy * dataset.nx + jx;
      const auto& p = dataset.mesh->vertices[v];
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", jx, jy, p.x(), p.y(),
                    p.z(), dataset.y[v], dataset.y[n + v]);
      out << buf;
    }
  }
  if (!out) throw std::runtime_error("save_panel_dataset: write failed for " + path.string());
}

PanelDataset load_panel_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_panel_dataset: cannot open " + path.string());
  std::string line;
  int lineno = 0;

  if (!std::getline(in, line)) throw ParseError("load_panel_dataset: empty file", 1);
  ++lineno;
  int nx = 0, ny = 0;
  double spacing = 0.0;
  std::string panel_id = "panel";
  {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok != "#") throw ParseError("load_panel_dataset: missing settings header", lineno);
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
      if (key == "nx") nx = std::stoi(value);
      else if (key == "ny") ny = std::stoi(value);
      else if (key == "spacing") spacing = std::stod(value);
      else if (key == "panel") panel_id = value;
    }
  }
  if (nx < 2 || ny < 2 || !(spacing > 0.0))
    throw ParseError("load_panel_dataset: header must set nx, ny and spacing", lineno);

  if (!std::getline(in, line)) throw ParseError("load_panel_dataset: missing column header", lineno + 1);
  ++lineno;

  const int n = nx * ny;
  Eigen::VectorXd y = Eigen::VectorXd::Constant(2 * n, std::nan(""));
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int i, j;
    double x, yy, z, u1, u2;
    char comma;
    if (!(ss >> i >> comma >> j >> comma >> x >> comma >> yy >> comma >> z >> comma >> u1 >>
          comma >> u2))
      throw ParseError("load_panel_dataset: bad data row", lineno);
    if (i < 0 || i >= nx || j < 0 || j >= ny)
      throw ParseError("load_panel_dataset: grid index out of range", lineno);
    y[j * nx + i] = u1;
    y[n + j * nx + i] = u2;
  }
  if (!y.allFinite())
    throw std::runtime_error("load_panel_dataset: missing grid cells in " + path.string());
  return make_grid_dataset(nx, ny, spacing, std::move(y), panel_id);
}

}  // namespace spde
