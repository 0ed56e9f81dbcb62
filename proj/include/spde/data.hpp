#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "spde/fem.hpp"
#include "spde/mesh.hpp"
#include "spde/model.hpp"

namespace spde {

/// Gridded observations identified with the nodes of a panel mesh; y stacks
/// the upper-surface values over the lower-surface values (both mm).
struct PanelDataset {
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const FemMatrices> fem;  // H-independent parts are what matter
  int nx = 0, ny = 0;
  double spacing = 1.0;
  Eigen::VectorXd y;  // 2 * vertex-count
  std::string panel_id;

  int n() const { return mesh ? mesh->vertex_count() : 0; }
};

PanelDataset make_grid_dataset(int nx, int ny, double spacing, Eigen::VectorXd y,
                               std::string panel_id);

/// Centered side x side sub-dataset on its own submesh; used as the surrogate
/// for optimization while exact likelihoods stay on the full grid.
PanelDataset surrogate_subset(const PanelDataset& dataset, int side);

/// Draws n_panels independent fields from the model and wraps them as
/// datasets (observations are the nodal weights; measurement is noiseless).
/// Panel j uses seed split_seed(seed, j) and, for nonstationary specs, its
/// own random-effects block.
std::vector<PanelDataset> simulate_datasets(const ModelSpec& spec, const ParamVector& params,
                                            int nx, int ny, double spacing, int n_panels,
                                            std::uint64_t seed);

// CSV with a settings header; columns i,j,x,y,z,u1,u2.
void save_panel_dataset(const PanelDataset& dataset, const std::filesystem::path& path);
PanelDataset load_panel_dataset(const std::filesystem::path& path);

}  // namespace spde
