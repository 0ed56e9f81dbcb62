// spde: coupled-SPDE Gaussian field models on triangulated surfaces.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "spde/data.hpp"
#include "spde/infer.hpp"
#include "spde/manifest.hpp"
#include "spde/mesh.hpp"
#include "spde/pipeline.hpp"
#include "spde/preprocess.hpp"

namespace fs = std::filesystem;
using namespace spde;

namespace {

struct Global {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string manifest_out;
};

void emit_manifest(RunManifest& manifest, const Global& g, const std::string& fallback,
                   double seconds) {
  manifest.wall_clock_seconds = seconds;
  const fs::path path = g.manifest_out.empty() ? fs::path(fallback) : fs::path(g.manifest_out);
  manifest.write(path);
}

std::vector<PanelDataset> load_panels(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no panel .csv files in " + dir.string());
  std::vector<PanelDataset> out;
  for (const auto& f : files) out.push_back(load_panel_dataset(f));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled-SPDE Gaussian random fields on triangulated 2-manifolds"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after subcommand arguments

  Global global;
  app.add_option("--seed", global.seed, "Top-level seed; all stage seeds derive from it");
  app.add_option("--threads", global.threads, "Worker threads for per-panel fits");
  app.add_option("--manifest-out", global.manifest_out, "Where to write the run manifest");

  // ---- mesh ----
  auto* mesh_cmd = app.add_subcommand("mesh", "Generate panel or cylinder meshes");
  mesh_cmd->fallthrough();
  mesh_cmd->require_subcommand(1);

  std::string dump_fem;
  double dump_h1 = 1.0, dump_h2 = 1.0;

  auto* panel_cmd = mesh_cmd->add_subcommand("panel", "Axis-aligned grid panel in the x-z plane");
  panel_cmd->fallthrough();
  int nx = 300, ny = 300;
  double spacing = 1.0;
  std::string mesh_out;
  panel_cmd->add_option("--nx", nx)->required();
  panel_cmd->add_option("--ny", ny)->required();
  panel_cmd->add_option("--spacing", spacing)->required();
  panel_cmd->add_option("--out", mesh_out)->required();
  panel_cmd->add_option("--dump-fem", dump_fem, "Dump assembled FEM matrices to <prefix>.*.txt");
  panel_cmd->add_option("--h1", dump_h1, "In-plane diffusion weight for the dump");
  panel_cmd->add_option("--h2", dump_h2, "Printing-direction diffusion weight for the dump");

  auto* cyl_cmd = mesh_cmd->add_subcommand("cylinder", "Padded cylinder about the z axis");
  cyl_cmd->fallthrough();
  double radius = 85.0, length = 581.0, pad = 0.25;
  int n_theta = 64, n_z = 128;
  std::string cyl_out;
  cyl_cmd->add_option("--radius", radius)->required();
  cyl_cmd->add_option("--length", length)->required();
  cyl_cmd->add_option("--ntheta", n_theta)->required();
  cyl_cmd->add_option("--nz", n_z)->required();
  cyl_cmd->add_option("--pad", pad, "Padding fraction per end")->capture_default_str();
  cyl_cmd->add_option("--out", cyl_out)->required();
  cyl_cmd->add_option("--dump-fem", dump_fem, "Dump assembled FEM matrices to <prefix>.*.txt");
  cyl_cmd->add_option("--h1", dump_h1, "In-plane diffusion weight for the dump");
  cyl_cmd->add_option("--h2", dump_h2, "Printing-direction diffusion weight for the dump");

  // ---- preprocess ----
  auto* pre_cmd = app.add_subcommand("preprocess", "Point cloud -> gridded panel dataset");
  pre_cmd->fallthrough();
  std::string pre_in, pre_out, pre_id = "panel";
  PreprocessOptions pre_opt;
  std::vector<double> pre_window;
  pre_cmd->add_option("--in", pre_in)->required();
  pre_cmd->add_option("--res", pre_opt.resolution, "Grid resolution")->capture_default_str();
  pre_cmd->add_option("--cutoff", pre_opt.cutoff_fraction, "High-frequency cutoff fraction")
      ->capture_default_str();
  pre_cmd->add_option("--window", pre_window, "Crop window s0 s1 t0 t1")->expected(4);
  pre_cmd->add_option("--rotate", pre_opt.rotate_degrees, "In-plane rotation (degrees)");
  pre_cmd->add_option("--panel-id", pre_id);
  pre_cmd->add_option("--out", pre_out)->required();

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "Maximum-likelihood fit of one model");
  fit_cmd->fallthrough();
  std::string fit_model, fit_data, fit_out;
  int surrogate_side = 0;
  fit_cmd->add_option("--model", fit_model)->required();
  fit_cmd->add_option("--data", fit_data, "Directory of panel .csv files")->required();
  fit_cmd->add_option("--surrogate-side", surrogate_side,
                      "Optimize on centered subgrids of this side (0 = full)");
  fit_cmd->add_option("--out", fit_out)->required();

  // ---- select ----
  auto* sel_cmd = app.add_subcommand("select", "Fit candidate models and rank by AIC");
  sel_cmd->fallthrough();
  std::vector<std::string> sel_models;
  std::string sel_data, sel_out;
  int sel_surrogate = 0;
  sel_cmd->add_option("--models", sel_models, "Model config files")->required()->expected(-1);
  sel_cmd->add_option("--data", sel_data)->required();
  sel_cmd->add_option("--surrogate-side", sel_surrogate);
  sel_cmd->add_option("--out", sel_out)->required();

  // ---- sample ----
  auto* sam_cmd = app.add_subcommand("sample", "Draw field samples on a mesh");
  sam_cmd->fallthrough();
  std::string sam_model, sam_mesh, sam_dir;
  int sam_n = 1;
  double sam_notional = 3.5;
  sam_cmd->add_option("--model", sam_model)->required();
  sam_cmd->add_option("--mesh", sam_mesh)->required();
  sam_cmd->add_option("--n-samples", sam_n)->capture_default_str();
  sam_cmd->add_option("--notional", sam_notional, "Notional thickness (mm)")
      ->capture_default_str();
  sam_cmd->add_option("--out-dir", sam_dir)->required();

  // ---- transfer ----
  auto* tr_cmd = app.add_subcommand("transfer", "Instantiate a fitted model on another mesh");
  tr_cmd->fallthrough();
  std::string tr_fit, tr_mesh, tr_dir;
  int tr_n = 1, tr_panel = 0;
  double tr_notional = 3.5;
  tr_cmd->add_option("--fit", tr_fit, "fit.json from the fit command")->required();
  tr_cmd->add_option("--mesh", tr_mesh, "Target mesh file")->required();
  tr_cmd->add_option("--n-samples", tr_n)->capture_default_str();
  tr_cmd->add_option("--notional", tr_notional)->capture_default_str();
  tr_cmd->add_option("--panel-effects", tr_panel,
                     "Random-effects block to carry over (nonstationary fits)");
  tr_cmd->add_option("--out-dir", tr_dir)->required();

  // ---- run ----
  auto* run_cmd = app.add_subcommand("run", "Run a staged pipeline from a JSON config");
  run_cmd->fallthrough();
  std::string run_config, run_dir;
  run_cmd->add_option("--config", run_config)->required();
  run_cmd->add_option("--out-dir", run_dir)->required();

  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  try {
    RunManifest manifest;
    manifest.seed = global.seed;

    if (panel_cmd->parsed()) {
      manifest.command = "mesh panel";
      manifest.config = {{"nx", std::to_string(nx)},
                         {"ny", std::to_string(ny)},
                         {"spacing", std::to_string(spacing)},
                         {"out", mesh_out}};
      const TriangleMesh m = grid_panel_mesh(nx, ny, spacing);
      save_mesh(m, mesh_out);
      if (!dump_fem.empty()) dump_fem_matrices(assemble(m, {dump_h1, dump_h2}), dump_fem);
      emit_manifest(manifest, global, mesh_out + ".manifest.json", elapsed());
    } else if (cyl_cmd->parsed()) {
      manifest.command = "mesh cylinder";
      manifest.config = {{"radius", std::to_string(radius)}, {"length", std::to_string(length)},
                         {"ntheta", std::to_string(n_theta)}, {"nz", std::to_string(n_z)},
                         {"pad", std::to_string(pad)},        {"out", cyl_out}};
      const CylinderMesh c = cylinder_mesh(radius, length, n_theta, n_z, pad);
      save_mesh(c.mesh, cyl_out, &c.central_window);
      if (!dump_fem.empty()) dump_fem_matrices(assemble(c.mesh, {dump_h1, dump_h2}), dump_fem);
      emit_manifest(manifest, global, cyl_out + ".manifest.json", elapsed());
    } else if (pre_cmd->parsed()) {
      manifest.command = "preprocess";
      manifest.config = {{"in", pre_in},
                         {"res", std::to_string(pre_opt.resolution)},
                         {"cutoff", std::to_string(pre_opt.cutoff_fraction)},
                         {"out", pre_out}};
      manifest.add_input(pre_in);
      if (!pre_window.empty())
        pre_opt.window = {pre_window[0], pre_window[1], pre_window[2], pre_window[3]};
      pre_opt.panel_id = pre_id;
      const PreprocessedPanel panel = preprocess_panel(load_point_cloud(pre_in), pre_opt);
      save_panel_dataset(dataset_from_preprocessed(panel, pre_id), pre_out);
      emit_manifest(manifest, global, pre_out + ".manifest.json", elapsed());
    } else if (fit_cmd->parsed()) {
      manifest.command = "fit";
      manifest.config = {{"model", fit_model},
                         {"data", fit_data},
                         {"surrogate_side", std::to_string(surrogate_side)},
                         {"out", fit_out}};
      manifest.add_input(fit_model);
      const ModelConfig cfg = load_model_config(fit_model);
      const auto datasets = load_panels(fit_data);
      FitOptions options;
      options.surrogate_side = surrogate_side;
      options.threads = global.threads;
      options.seed = global.seed;
      ModelSpec spec = cfg.spec;
      spec.n_panels = static_cast<int>(datasets.size());
      FitResult fit;
      if (spec.nonstationary()) {
        ModelSpec stat = spec.stationary_counterpart();
        ModelConfig stat_cfg{stat, cfg.named};
        const FitResult stage1 =
            natural_gradient_fit(stat, stat_cfg.params(), datasets, options);
        fit = two_stage_fit(spec, stage1, datasets, options);
      } else {
        fit = natural_gradient_fit(spec, ParamVector::from_named(spec, cfg.named), datasets,
                                   options);
      }
      save_fit_json(fit, fit_out);
      std::cout << "fit: loglik=" << fit.exact_loglik << " iterations=" << fit.iterations
                << " converged=" << (fit.converged ? "yes" : "no") << "\n";
      emit_manifest(manifest, global, fit_out + ".manifest.json", elapsed());
    } else if (sel_cmd->parsed()) {
      manifest.command = "select";
      manifest.config = {{"data", sel_data},
                         {"surrogate_side", std::to_string(sel_surrogate)},
                         {"out", sel_out}};
      const auto datasets = load_panels(sel_data);
      std::vector<ModelSpec> specs;
      for (const auto& m : sel_models) {
        manifest.add_input(m);
        ModelSpec s = load_model_config(m).spec;
        s.n_panels = static_cast<int>(datasets.size());
        specs.push_back(s);
      }
      FitOptions options;
      options.surrogate_side = sel_surrogate;
      options.threads = global.threads;
      options.seed = global.seed;
      const SelectionTable table = model_selection(specs, datasets, options);
      save_selection_csv(table, sel_out);
      if (table.winner >= 0)
        std::cout << "winner: " << to_string(table.rows[table.winner].spec.operator_kind) << " + "
                  << to_string(table.rows[table.winner].spec.noise_kind)
                  << " (AIC " << table.rows[table.winner].aic_value << ")\n";
      emit_manifest(manifest, global, sel_out + ".manifest.json", elapsed());
    } else if (sam_cmd->parsed()) {
      manifest.command = "sample";
      manifest.config = {{"model", sam_model}, {"mesh", sam_mesh},
                         {"n_samples", std::to_string(sam_n)}, {"out_dir", sam_dir}};
      manifest.add_input(sam_model);
      manifest.add_input(sam_mesh);
      const ModelConfig cfg = load_model_config(sam_model);
      std::vector<int> window;
      const TriangleMesh mesh = load_mesh(sam_mesh, &window);
      sample_to_files(cfg.spec, cfg.params(), mesh, sam_n, global.seed, sam_notional, sam_dir,
                      window.empty() ? nullptr : &window);
      emit_manifest(manifest, global, (fs::path(sam_dir) / "manifest.json").string(), elapsed());
    } else if (tr_cmd->parsed()) {
      manifest.command = "transfer";
      manifest.config = {{"fit", tr_fit},
                         {"mesh", tr_mesh},
                         {"n_samples", std::to_string(tr_n)},
                         {"notional", std::to_string(tr_notional)},
                         {"out_dir", tr_dir}};
      manifest.add_input(tr_fit);
      manifest.add_input(tr_mesh);
      transfer(tr_fit, tr_mesh, tr_n, global.seed, tr_notional, tr_dir, tr_panel);
      emit_manifest(manifest, global, (fs::path(tr_dir) / "manifest.json").string(), elapsed());
    } else if (run_cmd->parsed()) {
      return run_pipeline(run_config, run_dir,
                          app.count("--seed") ? static_cast<std::int64_t>(global.seed) : -1);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
