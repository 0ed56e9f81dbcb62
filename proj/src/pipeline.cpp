#include "spde/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "spde/errors.hpp"
#include "spde/manifest.hpp"
#include "spde/sample.hpp"

namespace spde {

namespace {

std::vector<double> parse_doubles(const std::string& text) {
  std::istringstream ss(text);
  std::vector<double> out;
  double v;
  while (ss >> v) out.push_back(v);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model_config: cannot open " + path.string());
  ModelConfig cfg;
  std::map<int, std::array<double, 8>> gtau, geta;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("model config: expected key = value", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    auto gamma_line = [&](std::map<int, std::array<double, 8>>& dst, size_t prefix_len) {
      const int panel = std::stoi(key.substr(prefix_len));
      const auto vals = parse_doubles(value);
      if (vals.size() != 8) throw ParseError("model config: gamma blocks need 8 values", lineno);
      std::array<double, 8> a{};
      std::copy(vals.begin(), vals.end(), a.begin());
      dst[panel] = a;
    };

    if (key == "operator") cfg.spec.operator_kind = operator_kind_from_string(value);
    else if (key == "noise") cfg.spec.noise_kind = noise_kind_from_string(value);
    else if (key == "n_panels") cfg.spec.n_panels = std::stoi(value);
    else if (key == "tau_d" || key == "c_tau_d") cfg.named.tau_d = std::stod(value);
    else if (key == "tau_o" || key == "c_tau_o") cfg.named.tau_o = std::stod(value);
    else if (key == "eta_d" || key == "c_eta_d") cfg.named.eta_d = std::stod(value);
    else if (key == "eta_o" || key == "c_eta_o") cfg.named.eta_o = std::stod(value);
    else if (key == "h1") cfg.named.h1 = std::stod(value);
    else if (key == "h2") cfg.named.h2 = std::stod(value);
    else if (key == "eta_noise") cfg.named.eta_noise = std::stod(value);
    else if (key == "theta_osc") cfg.named.theta_osc = std::stod(value);
    else if (key.rfind("gamma_tau_", 0) == 0) gamma_line(gtau, 10);
    else if (key.rfind("gamma_eta_", 0) == 0) gamma_line(geta, 10);
    else throw ParseError("model config: unknown key '" + key + "'", lineno);
  }
  if (cfg.spec.nonstationary() && (!gtau.empty() || !geta.empty())) {
    cfg.named.gamma_tau.assign(cfg.spec.n_panels, {});
    cfg.named.gamma_eta.assign(cfg.spec.n_panels, {});
    for (const auto& [p, a] : gtau) {
      if (p < 0 || p >= cfg.spec.n_panels)
        throw std::runtime_error("model config: gamma panel index out of range");
      cfg.named.gamma_tau[p] = a;
    }
    for (const auto& [p, a] : geta) {
      if (p < 0 || p >= cfg.spec.n_panels)
        throw std::runtime_error("model config: gamma panel index out of range");
      cfg.named.gamma_eta[p] = a;
    }
  }
  return cfg;
}

void save_model_config(const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model_config: cannot open " + path.string());
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "operator = " << to_string(config.spec.operator_kind) << "\n";
  out << "noise = " << to_string(config.spec.noise_kind) << "\n";
  out << "n_panels = " << config.spec.n_panels << "\n";
  out << "tau_d = " << num(config.named.tau_d) << "\n";
  out << "tau_o = " << num(config.named.tau_o) << "\n";
  out << "eta_d = " << num(config.named.eta_d) << "\n";
  out << "eta_o = " << num(config.named.eta_o) << "\n";
  if (config.spec.anisotropic()) {
    out << "h1 = " << num(config.named.h1) << "\n";
    out << "h2 = " << num(config.named.h2) << "\n";
  }
  if (config.spec.noise_kind != NoiseKind::White)
    out << "eta_noise = " << num(config.named.eta_noise) << "\n";
  if (config.spec.noise_kind == NoiseKind::Oscillatory)
    out << "theta_osc = " << num(config.named.theta_osc) << "\n";
  if (config.spec.nonstationary() && !config.named.gamma_tau.empty()) {
    for (int p = 0; p < config.spec.n_panels; ++p) {
      out << "gamma_tau_" << p << " =";
      for (double g : config.named.gamma_tau[p]) out << " " << num(g);
      out << "\n";
      out << "gamma_eta_" << p << " =";
      for (double g : config.named.gamma_eta[p]) out << " " << num(g);
      out << "\n";
    }
  }
}

void save_fit_json(const FitResult& fit, const std::filesystem::path& path) {
  nlohmann::json j;
  j["spec"]["operator"] = to_string(fit.spec.operator_kind);
  j["spec"]["noise"] = to_string(fit.spec.noise_kind);
  j["spec"]["n_panels"] = fit.spec.n_panels;
  j["theta_flat"] = std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size());
  j["loglik_trace"] = fit.loglik_trace;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["fisher_fallback"] = fit.fisher_fallback;
  j["exact_loglik"] = fit.exact_loglik;
  j["surrogate_loglik"] = fit.surrogate_loglik;
  j["seed"] = fit.seed;
  j["tool_version"] = kToolVersion;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_fit_json: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

FitResult load_fit_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_fit_json: cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  FitResult fit;
  fit.spec.operator_kind = operator_kind_from_string(j["spec"]["operator"]);
  fit.spec.noise_kind = noise_kind_from_string(j["spec"]["noise"]);
  fit.spec.n_panels = j["spec"]["n_panels"];
  const std::vector<double> theta = j["theta_flat"];
  fit.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
  fit.loglik_trace = j.value("loglik_trace", std::vector<double>{});
  fit.iterations = j.value("iterations", 0);
  fit.converged = j.value("converged", false);
  fit.fisher_fallback = j.value("fisher_fallback", false);
  fit.exact_loglik = j.value("exact_loglik", 0.0);
  fit.surrogate_loglik = j.value("surrogate_loglik", 0.0);
  fit.seed = j.value("seed", 0ULL);
  return fit;
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_point_cloud: cannot open " + path.string());
  PointCloud cloud;
  std::string line;
  int lineno = 0;
  bool any_label = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (std::isalpha(static_cast<unsigned char>(line[0]))) continue;  // column header
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw ParseError("point cloud: bad row", lineno);
    cloud.points.emplace_back(x, y, z);
    std::string side;
    if (ss >> side) {
      any_label = true;
      if (side == "upper" || side == "u" || side == "1") cloud.side.push_back(1);
      else if (side == "lower" || side == "l" || side == "2") cloud.side.push_back(-1);
      else throw ParseError("point cloud: side must be upper or lower", lineno);
    } else {
      cloud.side.push_back(0);
    }
  }
  if (!any_label) cloud.side.clear();
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_point_cloud: cannot open " + path.string());
  out << "x,y,z" << (cloud.side.empty() ? "" : ",side") << "\n";
  char buf[160];
  for (int i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", p.x(), p.y(), p.z());
    out << buf;
    if (!cloud.side.empty()) out << "," << (cloud.side[i] >= 0 ? "upper" : "lower");
    out << "\n";
  }
}

PanelDataset dataset_from_preprocessed(const PreprocessedPanel& panel, const std::string& id) {
  const int nx = panel.resolution;
  Eigen::VectorXd y(2 * nx * nx);
  for (int iy = 0; iy < nx; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      y[iy * nx + ix] = panel.u1(ix, iy);
      y[nx * nx + iy * nx + ix] = panel.u2(ix, iy);
    }
  return make_grid_dataset(nx, nx, panel.spacing, std::move(y), id);
}

Histogram histogram(const Eigen::VectorXd& values, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("histogram: bin width must be positive");
  Histogram h;
  h.bin_width = bin_width;
  if (values.size() == 0) return h;
  const double lo = values.minCoeff();
  h.origin = std::floor(lo / bin_width) * bin_width;
  const double hi = values.maxCoeff();
  const int nbins = std::max(1, static_cast<int>(std::floor((hi - h.origin) / bin_width)) + 1);
  h.counts.assign(nbins, 0);
  h.centers.resize(nbins);
  for (int b = 0; b < nbins; ++b) h.centers[b] = h.origin + (b + 0.5) * bin_width;
  for (int i = 0; i < values.size(); ++i) {
    int b = static_cast<int>(std::floor((values[i] - h.origin) / bin_width));
    b = std::clamp(b, 0, nbins - 1);
    ++h.counts[b];
  }
  return h;
}

void save_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_histogram_csv: cannot open " + path.string());
  out << "bin_center,count\n";
  char buf[64];
  for (size_t b = 0; b < h.counts.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.17g,%ld\n", h.centers[b], h.counts[b]);
    out << buf;
  }
}

SampleRun sample_to_files(const ModelSpec& spec, const ParamVector& params,
                          const TriangleMesh& mesh, int n_samples, std::uint64_t seed,
                          double notional_mm, const std::filesystem::path& out_dir,
                          const std::vector<int>* window) {
  std::filesystem::create_directories(out_dir);
  const FemMatrices fem = assemble(mesh);
  PrecisionModel pm;
  try {
    pm = build_precision(spec, params, fem, mesh, 0, false);
  } catch (const InvalidParameterError& e) {
    throw InvalidTransferError(std::string("model is invalid on the target mesh: ") + e.what());
  }
  CholeskyFactor factor(pm.Q);
  const int n = mesh.vertex_count();

  std::vector<int> all;
  if (!window) {
    all.resize(n);
    for (int i = 0; i < n; ++i) all[i] = i;
  }
  const std::vector<int>& keep = window ? *window : all;

  SampleRun run;
  std::vector<double> thickness_pool;
  thickness_pool.reserve(static_cast<size_t>(n_samples) * keep.size());
  char buf[224];
  for (int s = 0; s < n_samples; ++s) {
    FieldSample sample = sample_field(factor, split_seed(seed, static_cast<std::uint64_t>(s)));
    const Eigen::VectorXd thickness = thickness_field(sample, notional_mm);
    const std::filesystem::path file =
        out_dir / ("sample_" + std::to_string(s) + ".csv");
    std::ofstream out(file);
    if (!out) throw std::runtime_error("sample_to_files: cannot open " + file.string());
    out << "vertex_index,x,y,z,u1,u2,thickness\n";
    for (int v : keep) {
      const auto& p = mesh.vertices[v];
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", v, p.x(), p.y(),
                    p.z(), sample.weights[v], sample.weights[n + v], thickness[v]);
      out << buf;
      thickness_pool.push_back(thickness[v]);
    }
    run.sample_files.push_back(file);
  }

  const Eigen::Map<const Eigen::VectorXd> pool(thickness_pool.data(), thickness_pool.size());
  run.histogram_file = out_dir / "thickness_histogram.csv";
  save_histogram_csv(histogram(pool, 0.05), run.histogram_file);
  return run;
}

SampleRun transfer(const std::filesystem::path& fit_json,
                   const std::filesystem::path& target_mesh, int n_samples, std::uint64_t seed,
                   double notional_mm, const std::filesystem::path& out_dir, int panel_effects) {
  const FitResult fit = load_fit_json(fit_json);
  std::vector<int> window;
  const TriangleMesh mesh = load_mesh(target_mesh, &window);

  ModelSpec spec = fit.spec;
  ParamVector params(spec, fit.theta);
  if (spec.nonstationary() && (panel_effects < 0 || panel_effects >= spec.n_panels))
    throw InvalidTransferError("transfer: panel_effects index out of range");

  // Re-index so the sampler reads the requested random-effects block.
  if (spec.nonstationary() && panel_effects != 0) {
    const ParamLayout layout = param_layout(spec);
    Eigen::VectorXd theta = fit.theta;
    for (int k = 0; k < 16; ++k)
      theta[layout.gamma_tau_start(0) + k] = fit.theta[layout.gamma_tau_start(panel_effects) + k];
    params = ParamVector(spec, theta);
  }

  return sample_to_files(spec, params, mesh, n_samples, seed, notional_mm, out_dir,
                         window.empty() ? nullptr : &window);
}

void save_selection_csv(const SelectionTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_selection_csv: cannot open " + path.string());
  out << "iso,stat,noise,n_params,surrogate_ll,exact_ll,aic,winner\n";
  char buf[192];
  for (size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    if (!r.ok) {
      out << (r.spec.anisotropic() ? 0 : 1) << "," << (r.spec.nonstationary() ? 0 : 1) << ","
          << to_string(r.spec.noise_kind) << "," << r.n_params << ",error,error,error,0\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "%d,%d,%s,%d,%.17g,%.17g,%.17g,%d\n",
                  r.spec.anisotropic() ? 0 : 1, r.spec.nonstationary() ? 0 : 1,
                  to_string(r.spec.noise_kind).c_str(), r.n_params, r.surrogate_loglik,
                  r.exact_loglik, r.aic_value, static_cast<int>(i) == table.winner ? 1 : 0);
    out << buf;
  }
}

void dump_fem_matrices(const FemMatrices& fem, const std::filesystem::path& prefix) {
  auto dump_sparse = [&](const Eigen::SparseMatrix<double>& m, const char* name) {
    const std::filesystem::path path = prefix.string() + "." + name + ".txt";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dump_fem_matrices: cannot open " + path.string());
    char buf[96];
    for (int col = 0; col < m.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(m, col); it; ++it) {
        std::snprintf(buf, sizeof buf, "%ld %d %.17g\n", static_cast<long>(it.row()), col,
                      it.value());
        out << buf;
      }
  };
  dump_sparse(fem.C, "C");
  dump_sparse(fem.G, "G");
  dump_sparse(fem.G_aniso, "G_aniso");
  const std::filesystem::path path = prefix.string() + ".C_lumped.txt";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_fem_matrices: cannot open " + path.string());
  char buf[64];
  for (int i = 0; i < fem.n; ++i) {
    std::snprintf(buf, sizeof buf, "%d %.17g\n", i, fem.C_lumped[i]);
    out << buf;
  }
}

namespace {

std::vector<PanelDataset> load_panel_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no panel .csv files in " + dir.string());
  std::vector<PanelDataset> out;
  for (const auto& f : files) out.push_back(load_panel_dataset(f));
  return out;
}

FitResult fit_datasets(const ModelConfig& cfg, const std::vector<PanelDataset>& datasets,
                       const FitOptions& options) {
  ModelSpec spec = cfg.spec;
  spec.n_panels = static_cast<int>(datasets.size());
  if (spec.nonstationary()) {
    ModelConfig stat_cfg = cfg;
    stat_cfg.spec = spec.stationary_counterpart();
    const FitResult stage1 = natural_gradient_fit(
        stat_cfg.spec, stat_cfg.params(), datasets, options);
    return two_stage_fit(spec, stage1, datasets, options);
  }
  ModelConfig start_cfg = cfg;
  start_cfg.spec = spec;
  return natural_gradient_fit(spec, start_cfg.params(), datasets, options);
}

}  // namespace

int run_pipeline(const std::filesystem::path& config_json, const std::filesystem::path& out_dir,
                 std::int64_t seed_override) {
  const auto t_start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);

  nlohmann::json cfg;
  {
    std::ifstream in(config_json);
    if (!in) throw std::runtime_error("run_pipeline: cannot open " + config_json.string());
    in >> cfg;
  }
  const std::uint64_t seed =
      seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : cfg.value("seed", 0ULL);

  RunManifest manifest;
  manifest.command = "run";
  manifest.seed = seed;
  manifest.config["config_json"] = config_json.string();
  manifest.config["out_dir"] = out_dir.string();
  manifest.add_input(config_json);

  auto resolve = [&out_dir](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : out_dir / path;
  };

  std::string failed_stage;
  try {
    const auto& stages = cfg.at("stages");
    for (size_t si = 0; si < stages.size(); ++si) {
      const auto& st = stages[si];
      const std::string kind = st.at("stage");
      failed_stage = kind;
      const std::uint64_t stage_seed = split_seed(seed, si);

      if (kind == "mesh_panel") {
        const TriangleMesh m = grid_panel_mesh(st.at("nx"), st.at("ny"), st.at("spacing"));
        save_mesh(m, resolve(st.at("out")));
      } else if (kind == "mesh_cylinder") {
        const CylinderMesh c = cylinder_mesh(st.at("radius"), st.at("length"), st.at("n_theta"),
                                             st.at("n_z"), st.value("pad", 0.25));
        save_mesh(c.mesh, resolve(st.at("out")), &c.central_window);
      } else if (kind == "simulate") {
        const ModelConfig mc = load_model_config(resolve(st.at("model")));
        const int n_panels = st.at("n_panels");
        ModelSpec spec = mc.spec;
        spec.n_panels = n_panels;
        const auto datasets =
            simulate_datasets(spec, ParamVector::from_named(spec, mc.named), st.at("nx"),
                              st.at("ny"), st.at("spacing"), n_panels, stage_seed);
        const auto dir = resolve(st.at("out_dir"));
        std::filesystem::create_directories(dir);
        for (size_t d = 0; d < datasets.size(); ++d)
          save_panel_dataset(datasets[d], dir / ("panel_" + std::to_string(d) + ".csv"));
      } else if (kind == "preprocess") {
        const PointCloud cloud = load_point_cloud(resolve(st.at("in")));
        PreprocessOptions opt;
        opt.resolution = st.value("resolution", 300);
        opt.cutoff_fraction = st.value("cutoff", 0.5);
        if (st.contains("window")) {
          const std::vector<double> w = st.at("window");
          opt.window = std::array<double, 4>{w[0], w[1], w[2], w[3]};
        }
        opt.rotate_degrees = st.value("rotate", 0.0);
        const PreprocessedPanel panel = preprocess_panel(cloud, opt);
        save_panel_dataset(dataset_from_preprocessed(panel, st.value("panel_id", "panel")),
                           resolve(st.at("out")));
      } else if (kind == "fit") {
        const ModelConfig mc = load_model_config(resolve(st.at("model")));
        const auto datasets = load_panel_dir(resolve(st.at("data_dir")));
        FitOptions options;
        options.surrogate_side = st.value("surrogate_side", 0);
        options.threads = st.value("threads", 1);
        options.seed = stage_seed;
        save_fit_json(fit_datasets(mc, datasets, options), resolve(st.at("out")));
      } else if (kind == "select") {
        const auto datasets = load_panel_dir(resolve(st.at("data_dir")));
        FitOptions options;
        options.surrogate_side = st.value("surrogate_side", 0);
        options.threads = st.value("threads", 1);
        options.seed = stage_seed;
        std::vector<ModelSpec> specs;
        for (const auto& m : st.at("models")) {
          ModelSpec s = load_model_config(resolve(m)).spec;
          s.n_panels = static_cast<int>(datasets.size());
          specs.push_back(s);
        }
        save_selection_csv(model_selection(specs, datasets, options), resolve(st.at("out")));
      } else if (kind == "sample") {
        const ModelConfig mc = load_model_config(resolve(st.at("model")));
        std::vector<int> window;
        const TriangleMesh mesh = load_mesh(resolve(st.at("mesh")), &window);
        sample_to_files(mc.spec, mc.params(), mesh, st.value("n_samples", 1), stage_seed,
                        st.value("notional", 3.5), resolve(st.at("out_dir")),
                        window.empty() ? nullptr : &window);
      } else if (kind == "transfer") {
        transfer(resolve(st.at("fit")), resolve(st.at("mesh")), st.value("n_samples", 1),
                 stage_seed, st.value("notional", 3.5), resolve(st.at("out_dir")),
                 st.value("panel_effects", 0));
      } else {
        throw std::runtime_error("run_pipeline: unknown stage '" + kind + "'");
      }
    }
    failed_stage.clear();
  } catch (const std::exception& e) {
    std::ofstream marker(out_dir / "FAILED");
    marker << failed_stage << ": " << e.what() << "\n";
  }

  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  manifest.write(out_dir / "manifest.json");
  return failed_stage.empty() ? 0 : 1;
}

}  // namespace spde
