#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "gsr/gsr.hpp"

namespace fs = std::filesystem;
using gsr::io::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double parse_snr(const std::string& s) {
  if (s == "inf" || s == "Inf" || s == "INF") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !(v > 0.0)) throw gsr::InvalidArgument("--snr must be a positive number or 'inf', got '" + s + "'");
  return v;
}

ordered_json snr_json(double snr) { return std::isinf(snr) ? ordered_json("inf") : ordered_json(snr); }

fs::path sibling(const fs::path& stem, const std::string& suffix) { return fs::path(stem.string() + suffix); }

struct Manifest {
  std::string subcommand;
  std::vector<std::string> args;
  ordered_json config = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  ordered_json outputs = ordered_json::object();
  std::uint64_t seed = 0;
  std::string started = utc_now();

  void write(const fs::path& path) const {
    ordered_json j;
    j["subcommand"] = subcommand;
    j["args"] = args;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["version"] = kVersion;
    j["started"] = started;
    j["finished"] = utc_now();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw gsr::IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
  }
};

gsr::QSpaceDesign gradients_for(const std::string& given, const fs::path& truth) {
  return gsr::io::read_gradients(given.empty() ? sibling(truth, ".grad.txt") : fs::path(given));
}

// ---------------------------------------------------------------------------

struct GradientsOpts {
  int n = 64;
  double bvalue = 2000.0;
  std::string out;
};

void cmd_gradients(const GradientsOpts& o, Manifest& m) {
  const auto design = gsr::spiral_directions(o.n, o.bvalue);
  gsr::io::write_gradients(o.out, design);
  m.config = {{"n", o.n}, {"bvalue", o.bvalue}};
  m.outputs = {{"gradients", o.out}};
  m.write(sibling(o.out, ".manifest.json"));
}

struct PhantomOpts {
  std::vector<int> dims = {40, 40, 20};
  std::vector<double> voxel = {0.86, 0.86, 0.86};
  std::string gradients, out;
};

void cmd_phantom(const PhantomOpts& o, Manifest& m) {
  const auto design = gsr::io::read_gradients(o.gradients);
  const gsr::Dims dims{o.dims[0], o.dims[1], o.dims[2]};
  const gsr::VoxelSize voxel{o.voxel[0], o.voxel[1], o.voxel[2]};
  const gsr::Phantom ph = gsr::make_phantom(dims, voxel, design);
  gsr::io::write_volume(o.out, ph.signal, "ground-truth b0-normalized diffusion signal");
  gsr::io::write_labels(o.out + "_labels", ph.labels);
  gsr::io::write_gradients(sibling(o.out, ".grad.txt"), design);
  m.config = {{"dims", o.dims}, {"voxel_size_mm", o.voxel}};
  m.inputs = {{"gradients", o.gradients}};
  m.outputs = {{"truth", o.out}, {"labels", o.out + "_labels"}, {"gradients", o.out + ".grad.txt"}};
  m.write(sibling(o.out, ".manifest.json"));
}

struct SimulateOpts {
  std::string truth, gradients, basis, snr = "20", out_dir;
  int factor = 2;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

void cmd_simulate(const SimulateOpts& o, Manifest& m) {
  const double snr = parse_snr(o.snr);
  const auto truth = gsr::io::read_volume(o.truth);
  const auto design = gradients_for(o.gradients, o.truth);
  if (design.size() != truth.n_q) throw gsr::InvalidArgument("simulate: gradient table and truth disagree on N_q");
  const auto basis = o.basis.empty() ? gsr::default_basis(5) : gsr::io::read_basis(o.basis);
  const auto scheme = gsr::make_scheme(design, o.factor);
  if (basis.af != scheme.n_rf) throw gsr::InvalidArgument("simulate: basis size must equal the number of RF encodings (5)");
  const auto y = gsr::simulate_acquisition(truth, basis, scheme, {snr, o.seed}, o.threads);
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  for (std::size_t k = 0; k < y.size(); ++k)
    gsr::io::write_volume(dir / ("y_" + std::to_string(k)), y[k],
                          "thick-slice acquisition, RF profile " + std::to_string(k) + ", scheme " + scheme.label());
  gsr::io::write_scheme(dir / "scheme.json", scheme);
  gsr::io::write_basis(dir / "basis.json", basis);
  gsr::io::write_gradients(dir / "gradients.txt", design);
  m.seed = o.seed;
  m.config = {{"scheme_factor", o.factor}, {"snr", snr_json(snr)}, {"seed", o.seed}, {"af", basis.af}};
  m.inputs = {{"truth", o.truth}, {"gradients", o.gradients.empty() ? o.truth + ".grad.txt" : o.gradients},
              {"basis", o.basis.empty() ? "default" : o.basis}};
  m.outputs = {{"dir", o.out_dir}, {"n_acquisitions", scheme.total_acquisitions()}};
  m.write(dir / "manifest.json");
}

struct ReconstructOpts {
  std::string acq_dir, config, method = "gslider-sr", out;
  unsigned threads = 1;
};

void cmd_reconstruct(const ReconstructOpts& o, Manifest& m) {
  const fs::path dir(o.acq_dir);
  const auto scheme = gsr::io::read_scheme(dir / "scheme.json");
  const auto basis = gsr::io::read_basis(dir / "basis.json");
  const auto design = gsr::io::read_gradients(dir / "gradients.txt");
  const auto cfg = o.config.empty() ? gsr::SolverConfig{} : gsr::io::read_config(o.config);
  std::vector<gsr::DwiVolumeSet> y;
  for (int k = 0; k < scheme.n_rf; ++k) y.push_back(gsr::io::read_volume(dir / ("y_" + std::to_string(k))));
  m.config = gsr::io::config_to_json(cfg);
  m.config["method"] = o.method;
  m.inputs = {{"acq_dir", o.acq_dir}, {"config", o.config.empty() ? "defaults" : o.config}};
  if (o.method == "tikhonov") {
    const auto s = gsr::tikhonov_init(y, basis, scheme, cfg.tikhonov_mu, o.threads);
    gsr::io::write_volume(o.out, s, "Tikhonov reconstruction");
    m.outputs = {{"recon", o.out}};
  } else {
    if (static_cast<int>(design.size()) <= scheme.max_q_index())
      throw gsr::InvalidArgument("reconstruct: gradient table shorter than the scheme");
    const auto dict = gsr::build_dictionary(design);
    const auto r = gsr::reconstruct(y, basis, scheme, dict, cfg, o.threads);
    gsr::io::write_volume(o.out, r.s, "gSlider-SR reconstruction");
    gsr::io::write_report(sibling(o.out, ".report.json"), r.report);
    m.outputs = {{"recon", o.out}, {"report", o.out + ".report.json"}};
  }
  m.write(sibling(o.out, ".manifest.json"));
}

struct EvaluateOpts {
  std::string recon, truth, labels, gradients, out_csv, label = "recon";
};

void cmd_evaluate(const EvaluateOpts& o, Manifest& m) {
  const auto recon = gsr::io::read_volume(o.recon);
  const auto truth = gsr::io::read_volume(o.truth);
  auto labels = gsr::io::read_labels(o.labels.empty() ? o.truth + "_labels" : o.labels);
  const auto design = gradients_for(o.gradients, o.truth);
  const auto dict = gsr::build_dictionary(design);
  const gsr::Evaluator eval(truth, std::move(labels), design, dict);
  const auto ev = eval.evaluate(recon);

  std::vector<gsr::io::CsvRow> rows;
  auto add = [&](const std::string& metric, const gsr::Summary& s) {
    rows.push_back({o.label, metric, "median", s.median});
    rows.push_back({o.label, metric, "q25", s.q25});
    rows.push_back({o.label, metric, "q75", s.q75});
    rows.push_back({o.label, metric, "mean", s.mean});
  };
  add("nmse", gsr::summarize(ev.nmse));
  add("nmse_tissue", gsr::summarize(eval.tissue_nmse(ev)));
  std::vector<double> fa_err;
  for (std::size_t v = 0; v < ev.fa.size(); ++v)
    if (gsr::is_white_matter(eval.labels()[v])) fa_err.push_back(ev.fa[v] - eval.truth_fit(v).fa);
  add("fa_bias", gsr::summarize(fa_err));
  add("dti_angular_error", gsr::summarize(ev.dti_error));
  add("odf_angular_error", gsr::summarize(ev.odf_error));
  rows.push_back({o.label, "false_peak_pct", "value", ev.false_peak_pct});
  gsr::io::write_csv(o.out_csv, rows);

  // Excluded voxels are stored as 0 in the map.
  const fs::path stem = fs::path(o.out_csv).replace_extension("");
  gsr::DwiVolumeSet map(truth.dims, 1, truth.voxel_size);
  for (std::size_t v = 0; v < ev.nmse.size(); ++v) map.values[v] = std::isfinite(ev.nmse[v]) ? ev.nmse[v] : 0.0;
  gsr::io::write_volume(stem.string() + "_nmse", map, "per-voxel NMSE; 0 outside the head mask");
  m.config = {{"label", o.label}, {"peaks", {{"min_separation_deg", 25.0}, {"rel_threshold", 0.4}, {"max_peaks", 3},
                                             {"match_threshold_deg", 20.0}}}};
  m.inputs = {{"recon", o.recon}, {"truth", o.truth}, {"labels", o.labels.empty() ? o.truth + "_labels" : o.labels}};
  m.outputs = {{"csv", o.out_csv}, {"nmse_map", stem.string() + "_nmse"}};
  m.write(sibling(o.out_csv, ".manifest.json"));
}

struct McOpts {
  std::string truth, labels, gradients, config, snr = "20", out_dir;
  std::vector<int> factors = {2, 3, 4, 5};
  bool include_hr = false;
  int n_mc = 20;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

void cmd_mc(const McOpts& o, Manifest& m) {
  if (o.n_mc < 2) throw gsr::InvalidArgument("mc: --n-mc must be at least 2");
  const double snr = parse_snr(o.snr);
  const auto truth = gsr::io::read_volume(o.truth);
  auto labels = gsr::io::read_labels(o.labels.empty() ? o.truth + "_labels" : o.labels);
  const auto design = gradients_for(o.gradients, o.truth);
  const auto dict = gsr::build_dictionary(design);
  const gsr::Evaluator eval(truth, std::move(labels), design, dict);
  gsr::McSettings st;
  for (int f : o.factors) st.configurations.push_back({false, f});
  if (o.include_hr) st.configurations.push_back({true, 1});
  st.n_mc = o.n_mc;
  st.seed = o.seed;
  st.target_snr = snr;
  st.solver = o.config.empty() ? gsr::SolverConfig{} : gsr::io::read_config(o.config);
  const auto basis = gsr::default_basis(5);
  const auto summary = gsr::run_monte_carlo(eval, basis, design, dict, st, o.threads);

  const fs::path dir(o.out_dir);
  fs::create_directories(dir / "realizations");
  gsr::io::write_csv(dir / "summary.csv", gsr::summary_rows(summary));
  for (const auto& r : summary.results)
    for (std::size_t i = 0; i < r.realizations.size(); ++i) {
      const auto& real = r.realizations[i];
      ordered_json j;
      j["scheme"] = r.config.label();
      j["realization"] = i;
      j["seed"] = real.seed;
      j["snr"] = snr_json(snr);
      j["iterations_run"] = real.iterations_run;
      ordered_json metrics;
      for (std::size_t k = 0; k < real.metrics.size(); ++k) metrics[gsr::realization_metrics()[k]] = real.metrics[k];
      j["metrics"] = metrics;
      j["version"] = kVersion;
      std::ofstream out(dir / "realizations" / (r.config.label() + "_" + std::to_string(i) + ".json"), std::ios::binary);
      out << j.dump(2) << "\n";
    }
  m.seed = o.seed;
  m.config = gsr::io::config_to_json(st.solver);
  m.config["factors"] = o.factors;
  m.config["include_hr"] = o.include_hr;
  m.config["n_mc"] = o.n_mc;
  m.config["snr"] = snr_json(snr);
  m.config["hr_snr_ratio"] = st.hr_snr_ratio;
  m.inputs = {{"truth", o.truth}, {"config", o.config.empty() ? "defaults" : o.config}};
  m.outputs = {{"summary", (dir / "summary.csv").string()}, {"realizations", (dir / "realizations").string()}};
  m.write(dir / "manifest.json");
}

struct DictionaryOpts {
  std::string gradients, out;
};

void cmd_dictionary(const DictionaryOpts& o, Manifest& m) {
  const auto design = gsr::io::read_gradients(o.gradients);
  const auto dict = gsr::build_dictionary(design);
  gsr::io::write_dictionary(o.out, dict);
  m.config = {{"rho", dict.rho}, {"n_max", dict.n_max}, {"levels", dict.levels},
              {"orientations_per_level", dict.orientations_per_level}};
  m.inputs = {{"gradients", o.gradients}};
  m.outputs = {{"header", o.out + ".json"}, {"matrix", o.out + ".f64"}};
  m.write(sibling(o.out, ".manifest.json"));
}

int run(std::vector<std::string> args);

int replay(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw gsr::IoError("cannot open " + manifest_path + " for reading");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw gsr::ParseError(manifest_path + ": " + e.what());
  }
  if (!j.contains("args") || !j["args"].is_array()) throw gsr::CorruptFile(manifest_path + ": manifest has no args");
  auto args = j["args"].get<std::vector<std::string>>();
  if (args.empty() || args.front() == "replay") throw gsr::CorruptFile(manifest_path + ": manifest args cannot be replayed");
  return run(std::move(args));
}

int run(std::vector<std::string> args) {
  CLI::App app{"gSlider-SR simulation, reconstruction and evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  GradientsOpts go;
  auto* grad = app.add_subcommand("gradients", "write a spiral gradient table");
  grad->add_option("--n", go.n, "number of directions")->capture_default_str();
  grad->add_option("--bvalue", go.bvalue, "b-value in s/mm^2")->capture_default_str();
  grad->add_option("--out", go.out, "output gradient file")->required();

  PhantomOpts po;
  auto* phantom = app.add_subcommand("phantom", "write the synthetic ground truth");
  phantom->add_option("--dims", po.dims, "nx,ny,nz")->delimiter(',')->expected(3)->capture_default_str();
  phantom->add_option("--voxel-size", po.voxel, "mm,mm,mm")->delimiter(',')->expected(3)->capture_default_str();
  phantom->add_option("--gradients", po.gradients, "gradient table")->required();
  phantom->add_option("--out", po.out, "output stem")->required();

  SimulateOpts so;
  auto* simulate = app.add_subcommand("simulate", "simulate undersampled RF-encoded acquisitions");
  simulate->add_option("--truth", so.truth, "ground-truth stem")->required();
  simulate->add_option("--gradients", so.gradients, "gradient table (default <truth>.grad.txt)");
  simulate->add_option("--basis", so.basis, "encoding basis JSON (default J-2I, AF=5)");
  simulate->add_option("--scheme-factor", so.factor, "undersampling factor 1..5")->capture_default_str();
  simulate->add_option("--snr", so.snr, "target SNR or 'inf'")->capture_default_str();
  simulate->add_option("--seed", so.seed, "noise seed")->capture_default_str();
  simulate->add_option("--out-dir", so.out_dir, "output directory")->required();

  ReconstructOpts ro;
  auto* recon = app.add_subcommand("reconstruct", "reconstruct thin-slice data");
  recon->add_option("--acq-dir", ro.acq_dir, "directory written by simulate")->required();
  recon->add_option("--config", ro.config, "solver config JSON (default: simulation defaults)");
  recon->add_option("--method", ro.method, "gslider-sr or tikhonov")
      ->check(CLI::IsMember({"gslider-sr", "tikhonov"}))
      ->capture_default_str();
  recon->add_option("--out", ro.out, "output stem")->required();

  EvaluateOpts eo;
  auto* evaluate = app.add_subcommand("evaluate", "compare a reconstruction with the ground truth");
  evaluate->add_option("--recon", eo.recon, "reconstruction stem")->required();
  evaluate->add_option("--truth", eo.truth, "ground-truth stem")->required();
  evaluate->add_option("--labels", eo.labels, "label stem (default <truth>_labels)");
  evaluate->add_option("--gradients", eo.gradients, "gradient table (default <truth>.grad.txt)");
  evaluate->add_option("--label", eo.label, "scheme column value")->capture_default_str();
  evaluate->add_option("--out-csv", eo.out_csv, "metric CSV")->required();

  McOpts mo;
  auto* mc = app.add_subcommand("mc", "Monte-Carlo study");
  mc->add_option("--truth", mo.truth, "ground-truth stem")->required();
  mc->add_option("--labels", mo.labels, "label stem (default <truth>_labels)");
  mc->add_option("--gradients", mo.gradients, "gradient table (default <truth>.grad.txt)");
  mc->add_option("--config", mo.config, "solver config JSON");
  mc->add_option("--factors", mo.factors, "comma-separated factors")->delimiter(',')->capture_default_str();
  mc->add_flag("--include-hr", mo.include_hr, "add the direct thin-slice baseline");
  mc->add_option("--n-mc", mo.n_mc, "realizations per configuration")->capture_default_str();
  mc->add_option("--seed", mo.seed, "master seed")->capture_default_str();
  mc->add_option("--snr", mo.snr, "target SNR or 'inf'")->capture_default_str();
  mc->add_option("--out-dir", mo.out_dir, "output directory")->required();

  DictionaryOpts dopt;
  auto* dictionary = app.add_subcommand("dictionary", "export the ridgelet dictionary");
  dictionary->add_option("--gradients", dopt.gradients, "gradient table")->required();
  dictionary->add_option("--out", dopt.out, "output stem")->required();

  std::string manifest_path;
  auto* rep = app.add_subcommand("replay", "re-run a command from its manifest");
  rep->add_option("--manifest", manifest_path, "manifest JSON")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Manifest m;
  m.args = args;
  so.threads = ro.threads = mo.threads = threads;
  if (*grad) m.subcommand = "gradients", cmd_gradients(go, m);
  if (*phantom) m.subcommand = "phantom", cmd_phantom(po, m);
  if (*simulate) m.subcommand = "simulate", cmd_simulate(so, m);
  if (*recon) m.subcommand = "reconstruct", cmd_reconstruct(ro, m);
  if (*evaluate) m.subcommand = "evaluate", cmd_evaluate(eo, m);
  if (*mc) m.subcommand = "mc", cmd_mc(mo, m);
  if (*dictionary) m.subcommand = "dictionary", cmd_dictionary(dopt, m);
  if (*rep) return replay(manifest_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const gsr::NumericalFailure& e) {
    std::cerr << "gsr: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "gsr: " << e.what() << "\n";
    return 2;
  }
}
