#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "spde/data.hpp"
#include "spde/infer.hpp"
#include "spde/manifest.hpp"
#include "spde/mesh.hpp"
#include "spde/pipeline.hpp"
#include "spde/sample.hpp"

using namespace spde;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spde_pipe_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("model config round trip") {
  const fs::path dir = temp_dir("cfg");
  ModelConfig cfg;
  cfg.spec = {OperatorKind::AnisoNonstationary, NoiseKind::Oscillatory, 2};
  cfg.named.tau_d = 1.25;
  cfg.named.tau_o = 0.5;
  cfg.named.eta_d = 0.75;
  cfg.named.eta_o = 0.3;
  cfg.named.h1 = 0.9;
  cfg.named.h2 = 1.8;
  cfg.named.eta_noise = 1.1;
  cfg.named.theta_osc = 0.25;
  cfg.named.gamma_tau.assign(2, {});
  cfg.named.gamma_eta.assign(2, {});
  cfg.named.gamma_tau[1][3] = 0.05;
  cfg.named.gamma_eta[0][7] = -0.02;

  save_model_config(cfg, dir / "m.cfg");
  const ModelConfig r = load_model_config(dir / "m.cfg");
  CHECK(r.spec == cfg.spec);
  CHECK(r.named.tau_d == cfg.named.tau_d);
  CHECK(r.named.theta_osc == cfg.named.theta_osc);
  CHECK(r.named.gamma_tau[1][3] == 0.05);
  CHECK(r.named.gamma_eta[0][7] == -0.02);
  CHECK(r.params().flat() == cfg.params().flat());
  fs::remove_all(dir);
}

TEST_CASE("fit json round trip") {
  const fs::path dir = temp_dir("fit");
  FitResult fit;
  fit.spec = {OperatorKind::IsoStationary, NoiseKind::Smoother, 1};
  fit.theta = Eigen::VectorXd::LinSpaced(5, -0.4, 0.4);
  fit.loglik_trace = {-10.0, -8.5, -8.2};
  fit.iterations = 2;
  fit.converged = true;
  fit.exact_loglik = -8.2;
  fit.surrogate_loglik = -8.3;
  fit.seed = 99;
  save_fit_json(fit, dir / "fit.json");
  const FitResult r = load_fit_json(dir / "fit.json");
  CHECK(r.spec == fit.spec);
  CHECK(r.theta == fit.theta);
  CHECK(r.converged);
  CHECK(r.exact_loglik == fit.exact_loglik);
  CHECK(r.seed == 99);
  fs::remove_all(dir);
}

TEST_CASE("fem matrix dump is a faithful coordinate list") {
  const fs::path dir = temp_dir("dump");
  const TriangleMesh mesh = grid_panel_mesh(3, 3, 1.0);
  const FemMatrices fem = assemble(mesh, {1.5, 0.5});
  dump_fem_matrices(fem, dir / "fem");

  std::ifstream in(dir / "fem.G.txt");
  REQUIRE(in);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(fem.n, fem.n);
  int i, j;
  double v;
  int lines = 0;
  while (in >> i >> j >> v) {
    G(i, j) = v;
    ++lines;
  }
  CHECK(lines == fem.G.nonZeros());
  CHECK((G - Eigen::MatrixXd(fem.G)).cwiseAbs().maxCoeff() == 0.0);

  std::ifstream lumped(dir / "fem.C_lumped.txt");
  REQUIRE(lumped);
  Eigen::VectorXd cl = Eigen::VectorXd::Zero(fem.n);
  while (lumped >> i >> v) cl[i] = v;
  CHECK((cl - fem.C_lumped).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fs::exists(dir / "fem.C.txt"));
  CHECK(fs::exists(dir / "fem.G_aniso.txt"));
  fs::remove_all(dir);
}

TEST_CASE("histogram") {
  SUBCASE("zero-variance input lands in a single bin at the notional value") {
    const Histogram h = histogram(Eigen::VectorXd::Constant(500, 3.5), 0.05);
    long total = 0;
    int nonzero_bins = 0;
    for (size_t b = 0; b < h.counts.size(); ++b) {
      total += h.counts[b];
      if (h.counts[b] > 0) {
        ++nonzero_bins;
        CHECK(std::abs(h.centers[b] - 3.5) <= 0.05);
      }
    }
    CHECK(total == 500);
    CHECK(nonzero_bins == 1);
  }

  SUBCASE("counts partition the data") {
    Eigen::VectorXd v(6);
    v << 0.01, 0.02, 0.06, 0.11, 0.12, 0.99;
    const Histogram h = histogram(v, 0.05);
    long total = 0;
    for (long c : h.counts) total += c;
    CHECK(total == 6);
    CHECK(h.counts[0] == 2);
  }
}

TEST_CASE("point cloud round trip") {
  const fs::path dir = temp_dir("cloud");
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0.5, 2}, {3, -1, 0.25}};
  c.side = {1, -1, 1};
  save_point_cloud(c, dir / "c.csv");
  const PointCloud r = load_point_cloud(dir / "c.csv");
  REQUIRE(r.size() == 3);
  CHECK(r.points[1] == c.points[1]);
  CHECK(r.side == c.side);
  fs::remove_all(dir);
}

TEST_CASE("panel dataset round trip") {
  const fs::path dir = temp_dir("panel");
  const ModelSpec spec{OperatorKind::IsoStationary, NoiseKind::White, 1};
  ParamVector::Named named;
  named.tau_o = 0.5;
  named.eta_o = 0.5;
  const auto data =
      simulate_datasets(spec, ParamVector::from_named(spec, named), 6, 5, 1.5, 1, 9);
  save_panel_dataset(data[0], dir / "p.csv");
  const PanelDataset r = load_panel_dataset(dir / "p.csv");
  CHECK(r.nx == 6);
  CHECK(r.ny == 5);
  CHECK(r.spacing == 1.5);
  CHECK(r.y == data[0].y);  // %.17g text round-trips doubles exactly
  fs::remove_all(dir);
}

TEST_CASE("sample_to_files: deterministic outputs and window restriction") {
  const fs::path dir = temp_dir("samples");
  const CylinderMesh cyl = cylinder_mesh(3.0, 6.0, 12, 9, 0.25);
  const ModelSpec spec{OperatorKind::IsoStationary, NoiseKind::White, 1};
  ParamVector::Named named;
  named.tau_o = 0.5;
  named.eta_o = 0.5;
  const ParamVector params = ParamVector::from_named(spec, named);

  const SampleRun a =
      sample_to_files(spec, params, cyl.mesh, 2, 77, 3.5, dir / "a", &cyl.central_window);
  const SampleRun b =
      sample_to_files(spec, params, cyl.mesh, 2, 77, 3.5, dir / "b", &cyl.central_window);
  REQUIRE(a.sample_files.size() == 2);

  // byte-identical rerun under the same seed
  CHECK(slurp(a.sample_files[0]) == slurp(b.sample_files[0]));
  CHECK(slurp(a.sample_files[1]) == slurp(b.sample_files[1]));
  CHECK(slurp(a.histogram_file) == slurp(b.histogram_file));

  // restricted to the central window: count data lines
  const std::string content = slurp(a.sample_files[0]);
  const long rows = std::count(content.begin(), content.end(), '\n') - 1;
  CHECK(rows == static_cast<long>(cyl.central_window.size()));
  fs::remove_all(dir);
}

TEST_CASE("transfer: training mesh reproduces the training precision") {
  const fs::path dir = temp_dir("transfer");
  const ModelSpec spec{OperatorKind::IsoStationary, NoiseKind::White, 1};
  ParamVector::Named named;
  named.tau_d = 1.1;
  named.tau_o = 0.6;
  named.eta_d = 0.9;
  named.eta_o = 0.5;
  const ParamVector truth = ParamVector::from_named(spec, named);
  const auto data = simulate_datasets(spec, truth, 8, 8, 1.0, 1, 5);

  FitResult fit = natural_gradient_fit(spec, truth, data, {});
  save_fit_json(fit, dir / "fit.json");
  save_mesh(*data[0].mesh, dir / "panel.mesh");

  const SampleRun run = transfer(dir / "fit.json", dir / "panel.mesh", 1, 3, 3.5, dir / "out");
  CHECK(fs::exists(run.histogram_file));
  REQUIRE(run.sample_files.size() == 1);

  // the transferred sample equals one drawn directly from the training Q
  const PrecisionModel pm =
      build_precision(spec, fit.params(), *data[0].fem, *data[0].mesh, 0, false);
  const CholeskyFactor factor(pm.Q);
  const FieldSample direct = sample_field(factor, split_seed(3, 0));
  const std::string file = slurp(run.sample_files[0]);
  std::istringstream ss(file);
  std::string header;
  std::getline(ss, header);
  int idx;
  char comma;
  double x, y, z, u1, u2, th;
  ss >> idx >> comma >> x >> comma >> y >> comma >> z >> comma >> u1 >> comma >> u2 >> comma >> th;
  CHECK(u1 == doctest::Approx(direct.weights[0]).epsilon(1e-12));
  CHECK(u2 == doctest::Approx(direct.weights[data[0].n()]).epsilon(1e-12));
  fs::remove_all(dir);
}

TEST_CASE("run_pipeline") {
  SUBCASE("single mesh stage produces the mesh and a manifest") {
    const fs::path dir = temp_dir("run1");
    {
      std::ofstream cfg(dir / "cfg.json");
      cfg << R"({"seed": 4, "stages": [
        {"stage": "mesh_panel", "nx": 4, "ny": 5, "spacing": 1.0, "out": "panel.mesh"}
      ]})";
    }
    CHECK(run_pipeline(dir / "cfg.json", dir) == 0);
    CHECK(fs::exists(dir / "panel.mesh"));
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(!fs::exists(dir / "FAILED"));
    const TriangleMesh m = load_mesh(dir / "panel.mesh");
    CHECK(m.vertex_count() == 20);
    fs::remove_all(dir);
  }

  SUBCASE("failing stage leaves a marker and nonzero exit") {
    const fs::path dir = temp_dir("run2");
    {
      std::ofstream cfg(dir / "cfg.json");
      cfg << R"({"stages": [
        {"stage": "mesh_panel", "nx": 1, "ny": 5, "spacing": 1.0, "out": "panel.mesh"}
      ]})";
    }
    CHECK(run_pipeline(dir / "cfg.json", dir) == 1);
    CHECK(fs::exists(dir / "FAILED"));
    fs::remove_all(dir);
  }

  SUBCASE("simulate, fit, select and transfer chain") {
    const fs::path dir = temp_dir("run3");
    {
      ModelConfig truth;
      truth.spec = {OperatorKind::IsoStationary, NoiseKind::White, 1};
      truth.named.tau_d = 1.0;
      truth.named.tau_o = 0.6;
      truth.named.eta_d = 1.0;
      truth.named.eta_o = 0.6;
      save_model_config(truth, dir / "truth.cfg");
      ModelConfig candidate = truth;  // fit starts from the same family
      save_model_config(candidate, dir / "iso_white.cfg");
      ModelConfig smoother = truth;
      smoother.spec.noise_kind = NoiseKind::Smoother;
      save_model_config(smoother, dir / "iso_smoother.cfg");
    }
    {
      std::ofstream cfg(dir / "cfg.json");
      cfg << R"({"seed": 11, "stages": [
        {"stage": "mesh_cylinder", "radius": 2.0, "length": 5.0, "n_theta": 10,
         "n_z": 8, "pad": 0.25, "out": "cyl.mesh"},
        {"stage": "simulate", "model": "truth.cfg", "nx": 8, "ny": 8,
         "spacing": 1.0, "n_panels": 2, "out_dir": "panels"},
        {"stage": "fit", "model": "iso_white.cfg", "data_dir": "panels",
         "out": "fit.json"},
        {"stage": "select", "models": ["iso_white.cfg", "iso_smoother.cfg"],
         "data_dir": "panels", "out": "table.csv"},
        {"stage": "transfer", "fit": "fit.json", "mesh": "cyl.mesh",
         "n_samples": 2, "notional": 3.5, "out_dir": "transfer"}
      ]})";
    }
    CHECK(run_pipeline(dir / "cfg.json", dir) == 0);
    CHECK(!fs::exists(dir / "FAILED"));
    CHECK(fs::exists(dir / "fit.json"));
    CHECK(fs::exists(dir / "table.csv"));
    CHECK(fs::exists(dir / "transfer" / "sample_1.csv"));
    CHECK(fs::exists(dir / "transfer" / "thickness_histogram.csv"));

    const std::string table = slurp(dir / "table.csv");
    CHECK(table.find("iso,stat,noise,n_params,surrogate_ll,exact_ll,aic,winner") == 0);

    // reruns are byte-identical on every numeric artifact
    const fs::path dir2 = temp_dir("run3b");
    for (const char* f : {"cfg.json", "truth.cfg", "iso_white.cfg", "iso_smoother.cfg"})
      fs::copy_file(dir / f, dir2 / f);
    CHECK(run_pipeline(dir2 / "cfg.json", dir2) == 0);
    CHECK(slurp(dir / "fit.json") == slurp(dir2 / "fit.json"));
    CHECK(slurp(dir / "table.csv") == slurp(dir2 / "table.csv"));
    CHECK(slurp(dir / "transfer" / "sample_0.csv") == slurp(dir2 / "transfer" / "sample_0.csv"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
  }
}

TEST_CASE("manifest records inputs and is valid json") {
  const fs::path dir = temp_dir("manifest");
  {
    std::ofstream f(dir / "input.txt");
    f << "payload";
  }
  RunManifest m;
  m.command = "test";
  m.seed = 7;
  m.add_input(dir / "input.txt");
  m.write(dir / "m.json");
  const std::string text = slurp(dir / "m.json");
  CHECK(text.find("\"command\": \"test\"") != std::string::npos);
  CHECK(text.find("input.txt") != std::string::npos);
  fs::remove_all(dir);
}
