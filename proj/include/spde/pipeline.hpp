#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spde/data.hpp"
#include "spde/infer.hpp"
#include "spde/mesh.hpp"
#include "spde/model.hpp"
#include "spde/preprocess.hpp"

namespace spde {

/// Plain-text model configuration: `operator = ...`, `noise = ...`,
/// `n_panels = ...` and named parameter assignments.
struct ModelConfig {
  ModelSpec spec;
  ParamVector::Named named;

  ParamVector params() const { return ParamVector::from_named(spec, named); }
};

ModelConfig load_model_config(const std::filesystem::path& path);
void save_model_config(const ModelConfig& config, const std::filesystem::path& path);

void save_fit_json(const FitResult& fit, const std::filesystem::path& path);
FitResult load_fit_json(const std::filesystem::path& path);

// Point-cloud CSV `x,y,z[,side]` with side in {upper, lower}.
PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

PanelDataset dataset_from_preprocessed(const PreprocessedPanel& panel, const std::string& id);

struct Histogram {
  double bin_width = 0.05;
  double origin = 0.0;  // left edge of bin 0
  std::vector<double> centers;
  std::vector<long> counts;
};
Histogram histogram(const Eigen::VectorXd& values, double bin_width);
void save_histogram_csv(const Histogram& h, const std::filesystem::path& path);

/// Writes n_samples CSV files `vertex_index,x,y,z,u1,u2,thickness` restricted
/// to `window` (all vertices when null) plus thickness_histogram.csv.
struct SampleRun {
  std::vector<std::filesystem::path> sample_files;
  std::filesystem::path histogram_file;
};
SampleRun sample_to_files(const ModelSpec& spec, const ParamVector& params,
                          const TriangleMesh& mesh, int n_samples, std::uint64_t seed,
                          double notional_mm, const std::filesystem::path& out_dir,
                          const std::vector<int>* window = nullptr);

/// Rebuilds Q from a fitted model on a target mesh, samples, restricts to the
/// mesh's central window and emits samples plus a thickness histogram
/// (0.05 mm bins). Nonstationary fits take panel block `panel_effects`.
SampleRun transfer(const std::filesystem::path& fit_json,
                   const std::filesystem::path& target_mesh, int n_samples, std::uint64_t seed,
                   double notional_mm, const std::filesystem::path& out_dir,
                   int panel_effects = 0);

void save_selection_csv(const SelectionTable& table, const std::filesystem::path& path);

/// Coordinate-list text dumps (`i j value` per line) of the assembled FEM
/// matrices: <prefix>.C.txt, <prefix>.C_lumped.txt (i value), <prefix>.G.txt
/// and <prefix>.G_aniso.txt.
void dump_fem_matrices(const FemMatrices& fem, const std::filesystem::path& prefix);

/// Runs the staged pipeline described by a JSON config; every artifact lands
/// under out_dir and all randomness derives from one top-level seed. Returns
/// 0 when every stage succeeds; on failure the partial artifacts stay and a
/// FAILED marker names the stage.
int run_pipeline(const std::filesystem::path& config_json, const std::filesystem::path& out_dir,
                 std::int64_t seed_override = -1);

}  // namespace spde
