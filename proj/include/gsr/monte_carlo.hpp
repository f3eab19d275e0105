#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gsr/analysis.hpp"
#include "gsr/encoding.hpp"
#include "gsr/error.hpp"
#include "gsr/io.hpp"
#include "gsr/parallel.hpp"
#include "gsr/qspace.hpp"
#include "gsr/ridgelets.hpp"
#include "gsr/solver.hpp"

namespace gsr {

// One configuration of the study: an undersampling factor reconstructed with
// the SR solver, or the direct thin-slice acquisition (hr).
struct McConfiguration {
  bool hr = false;
  int factor = 1;
  std::string label() const { return hr ? "HR" : std::to_string(factor) + "X"; }
};

struct McSettings {
  std::vector<McConfiguration> configurations;
  int n_mc = 20;
  std::uint64_t seed = 0;
  double target_snr = 20.0;
  double hr_snr_ratio = kHrSnrRatio;
  SolverConfig solver;
  PeakConfig peaks;
};

inline const std::vector<std::string>& realization_metrics() {
  static const std::vector<std::string> names = {"nmse", "nmse_tissue", "dti_angular_error", "odf_angular_error",
                                                 "false_peak_pct"};
  return names;
}

struct RealizationResult {
  std::uint64_t seed = 0;
  std::vector<double> metrics;  // ordered as realization_metrics()
  int iterations_run = 0;
};

struct McConfigurationResult {
  McConfiguration config;
  std::vector<RealizationResult> realizations;
  Summary fa_bias;  // voxelwise mean(FA) - FA_truth over white matter
  Summary fa_std;   // voxelwise std over realizations, white matter
  Summary metric(std::size_t m) const {
    std::vector<double> v;
    for (const auto& r : realizations) v.push_back(r.metrics[m]);
    return summarize(v);
  }
};

struct McSummary {
  std::vector<McConfigurationResult> results;
  int n_mc = 0;
};

inline std::vector<io::CsvRow> summary_rows(const McSummary& s) {
  std::vector<io::CsvRow> rows;
  auto add = [&](const std::string& scheme, const std::string& metric, const Summary& st) {
    rows.push_back({scheme, metric, "median", st.median});
    rows.push_back({scheme, metric, "q25", st.q25});
    rows.push_back({scheme, metric, "q75", st.q75});
    rows.push_back({scheme, metric, "mean", st.mean});
  };
  for (const auto& r : s.results) {
    const std::string label = r.config.label();
    const auto& names = realization_metrics();
    for (std::size_t m = 0; m < names.size(); ++m) add(label, names[m], r.metric(m));
    add(label, "fa_bias", r.fa_bias);
    add(label, "fa_std", r.fa_std);
  }
  return rows;
}

namespace detail {

inline double median_of(const std::vector<double>& v) { return summarize(v).median; }

}  // namespace detail

// Realizations of all configurations are independent work items; each
// reconstruction is single-threaded so that the result does not depend on
// `threads`. Aggregation runs in realization order.
inline McSummary run_monte_carlo(const Evaluator& eval, const EncodingBasis& basis, const QSpaceDesign& design,
                                 const RidgeletDictionary& dict, const McSettings& st, unsigned threads = 1) {
  if (st.n_mc < 2) throw InvalidArgument("monte carlo: n_mc must be at least 2");
  if (st.configurations.empty()) throw InvalidArgument("monte carlo: no configurations");
  st.solver.validate();
  const DwiVolumeSet& truth = eval.truth();
  check_slab_divisible(truth.dims, basis.af);
  std::vector<SamplingScheme> schemes;
  for (const auto& c : st.configurations) {
    if (c.hr) {
      schemes.emplace_back();
      continue;
    }
    schemes.push_back(make_scheme(design, c.factor));
    validate_scheme(schemes.back(), design.size());
  }

  const std::size_t n_cfg = st.configurations.size(), n_mc = static_cast<std::size_t>(st.n_mc);
  const std::size_t n_vox = truth.voxel_count();
  std::vector<RealizationResult> results(n_cfg * n_mc);
  std::vector<std::vector<double>> fa(n_cfg * n_mc);

  parallel_for(n_cfg * n_mc, threads, [&](std::size_t item) {
    const std::size_t c = item / n_mc, i = item % n_mc;
    const McConfiguration& conf = st.configurations[c];
    const NoiseSpec noise{st.target_snr, st.seed + i};
    RealizationResult& out = results[item];
    out.seed = noise.seed;
    DwiVolumeSet recon;
    if (conf.hr) {
      recon = simulate_hr(truth, basis, noise, st.hr_snr_ratio);
    } else {
      const auto y = simulate_acquisition(truth, basis, schemes[c], noise, 1);
      ReconResult r = reconstruct(y, basis, schemes[c], dict, st.solver, 1);
      out.iterations_run = r.report.iterations_run;
      recon = std::move(r.s);
    }
    const VolumeEvaluation ev = eval.evaluate(recon);
    out.metrics = {detail::median_of(ev.nmse), detail::median_of(eval.tissue_nmse(ev)), detail::median_of(ev.dti_error),
                   detail::median_of(ev.odf_error), ev.false_peak_pct};
    fa[item] = ev.fa;
  });

  McSummary summary;
  summary.n_mc = st.n_mc;
  const auto& labels = eval.labels();
  for (std::size_t c = 0; c < n_cfg; ++c) {
    McConfigurationResult r;
    r.config = st.configurations[c];
    std::vector<double> bias, spread;
    for (std::size_t v = 0; v < n_vox; ++v) {
      if (!is_white_matter(labels[v])) continue;
      double sum = 0.0;
      for (std::size_t i = 0; i < n_mc; ++i) sum += fa[c * n_mc + i][v];
      const double mean = sum / static_cast<double>(n_mc);
      double ss = 0.0;
      for (std::size_t i = 0; i < n_mc; ++i) ss += (fa[c * n_mc + i][v] - mean) * (fa[c * n_mc + i][v] - mean);
      bias.push_back(mean - eval.truth_fit(v).fa);
      spread.push_back(std::sqrt(ss / static_cast<double>(n_mc - 1)));
    }
    r.fa_bias = summarize(bias);
    r.fa_std = summarize(spread);
    for (std::size_t i = 0; i < n_mc; ++i) r.realizations.push_back(results[c * n_mc + i]);
    summary.results.push_back(std::move(r));
  }
  return summary;
}

}  // namespace gsr
