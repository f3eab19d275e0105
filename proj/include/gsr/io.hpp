#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "gsr/encoding.hpp"
#include "gsr/error.hpp"
#include "gsr/qspace.hpp"
#include "gsr/ridgelets.hpp"
#include "gsr/solver.hpp"
#include "gsr/volume.hpp"

namespace gsr::io {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kVolumeDtype = "f32le";
inline constexpr const char* kVolumeOrder = "x-fastest,q-slowest";

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline ordered_json parse_json(const std::filesystem::path& path) {
  try {
    return ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) { write_bytes(path, j.dump(2) + "\n"); }

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

template <typename T>
T get_field(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw CorruptFile(where + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(where + ": bad field \"" + key + "\": " + e.what());
  }
}

}  // namespace detail

// 17 significant digits, '.' decimal point.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Volumes: <stem>.json header plus <stem>.f32 raw little-endian payload.

inline void write_volume(const std::filesystem::path& stem, const DwiVolumeSet& set, const std::string& description = "") {
  if (!set.all_finite()) throw InvalidArgument("write_volume: non-finite values in " + stem.string());
  ordered_json header;
  header["dims"] = set.dims;
  header["n_q"] = set.n_q;
  header["voxel_size_mm"] = set.voxel_size;
  header["dtype"] = kVolumeDtype;
  header["order"] = kVolumeOrder;
  header["description"] = description;
  std::string payload(set.size() * 4, '\0');
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(set.values[i]));
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  detail::write_json(detail::with_suffix(stem, ".json"), header);
  detail::write_bytes(detail::with_suffix(stem, ".f32"), payload);
}

inline DwiVolumeSet read_volume(const std::filesystem::path& stem) {
  const auto header_path = detail::with_suffix(stem, ".json");
  const ordered_json header = detail::parse_json(header_path);
  const std::string where = header_path.string();
  const auto dtype = detail::get_field<std::string>(header, "dtype", where);
  const auto order = detail::get_field<std::string>(header, "order", where);
  if (dtype != kVolumeDtype) throw UnsupportedFormat(where + ": unsupported dtype \"" + dtype + "\"");
  if (order != kVolumeOrder) throw UnsupportedFormat(where + ": unsupported order \"" + order + "\"");
  const auto dims = detail::get_field<Dims>(header, "dims", where);
  const auto n_q = detail::get_field<int>(header, "n_q", where);
  const auto voxel = detail::get_field<VoxelSize>(header, "voxel_size_mm", where);
  DwiVolumeSet set;
  try {
    set = DwiVolumeSet(dims, n_q, voxel);
  } catch (const InvalidArgument& e) {
    throw CorruptFile(where + ": " + e.what());
  }
  const auto payload_path = detail::with_suffix(stem, ".f32");
  const std::string payload = detail::read_text(payload_path);
  if (payload.size() != set.size() * 4)
    throw CorruptFile(payload_path.string() + ": payload has " + std::to_string(payload.size()) + " bytes, header implies " +
                      std::to_string(set.size() * 4));
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
    set.values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  if (!set.all_finite()) throw CorruptFile(payload_path.string() + ": non-finite values");
  return set;
}

inline void write_labels(const std::filesystem::path& stem, const LabelVolume& labels) {
  DwiVolumeSet v(labels.dims, 1, labels.voxel_size);
  for (std::size_t n = 0; n < labels.voxel_count(); ++n) v.values[n] = static_cast<double>(labels.labels[n]);
  write_volume(stem, v, "tissue labels: 0 background, 1 CSF, 2 GM, 3 WM bundle A, 4 WM bundle B, 5 crossing");
}

inline LabelVolume read_labels(const std::filesystem::path& stem) {
  const DwiVolumeSet v = read_volume(stem);
  if (v.n_q != 1) throw CorruptFile(stem.string() + ": label volume must have n_q = 1");
  LabelVolume labels;
  labels.dims = v.dims;
  labels.voxel_size = v.voxel_size;
  labels.labels.reserve(v.voxel_count());
  for (double x : v.values) {
    if (x != std::round(x) || x < 0 || x > 5) throw CorruptFile(stem.string() + ": invalid tissue label");
    labels.labels.push_back(static_cast<Tissue>(static_cast<int>(x)));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Gradient table: one "gx gy gz b" line per image. b0 images are zero
// vectors with b = 0.

inline void write_gradients(const std::filesystem::path& path, const QSpaceDesign& design) {
  std::string text;
  for (int i = 0; i < design.n_b0; ++i) text += "0 0 0 0\n";
  for (const Vec3& g : design.directions)
    text += format_double(g.x()) + " " + format_double(g.y()) + " " + format_double(g.z()) + " " +
            format_double(design.bvalue) + "\n";
  detail::write_bytes(path, text);
}

inline QSpaceDesign parse_gradients(const std::string& text, const std::string& where = "gradients") {
  QSpaceDesign design;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_b = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    double gx, gy, gz, b;
    std::string extra;
    if (!(ls >> gx >> gy >> gz >> b) || (ls >> extra))
      throw ParseError(where + ":" + std::to_string(line_no) + ": expected 'gx gy gz b'");
    Vec3 g(gx, gy, gz);
    const double norm = g.norm();
    if (!std::isfinite(norm) || !std::isfinite(b) || b < 0)
      throw ParseError(where + ":" + std::to_string(line_no) + ": non-finite or negative value");
    if (norm == 0.0) {
      if (b == 0.0) {
        ++design.n_b0;
        continue;
      }
      throw ParseError(where + ":" + std::to_string(line_no) + ": zero gradient vector with b > 0");
    }
    if (b == 0.0) throw ParseError(where + ":" + std::to_string(line_no) + ": nonzero gradient with b = 0");
    if (std::abs(norm - 1.0) > 1e-4)
      throw ParseError(where + ":" + std::to_string(line_no) + ": gradient is not unit norm (" + format_double(norm) + ")");
    if (std::abs(norm - 1.0) > 1e-15) g /= norm;
    if (g.y() < 0.0) g = -g;
    if (have_b && b != design.bvalue)
      throw ParseError(where + ":" + std::to_string(line_no) + ": multiple b-values; only single-shell tables are supported");
    design.bvalue = b;
    have_b = true;
    design.directions.push_back(g);
  }
  if (design.directions.empty()) throw ParseError(where + ": no diffusion-weighted directions");
  return design;
}

inline QSpaceDesign read_gradients(const std::filesystem::path& path) {
  return parse_gradients(detail::read_text(path), path.string());
}

// ---------------------------------------------------------------------------
// Scheme and basis files

inline ordered_json scheme_to_json(const SamplingScheme& s) {
  ordered_json j;
  j["n_rf"] = s.n_rf;
  j["factor"] = s.factor;
  j["assignments"] = s.assignments;
  return j;
}

inline void write_scheme(const std::filesystem::path& path, const SamplingScheme& s) {
  detail::write_json(path, scheme_to_json(s));
}

inline SamplingScheme read_scheme(const std::filesystem::path& path) {
  const ordered_json j = detail::parse_json(path);
  SamplingScheme s;
  s.n_rf = detail::get_field<int>(j, "n_rf", path.string());
  s.factor = detail::get_field<int>(j, "factor", path.string());
  s.assignments = detail::get_field<std::vector<std::vector<int>>>(j, "assignments", path.string());
  if (static_cast<int>(s.assignments.size()) != s.n_rf) throw CorruptFile(path.string() + ": assignments count differs from n_rf");
  validate_scheme(s, s.max_q_index() + 1);
  return s;
}

inline void write_basis(const std::filesystem::path& path, const EncodingBasis& basis) {
  ordered_json j;
  j["af"] = basis.af;
  std::vector<std::vector<double>> rows(basis.af, std::vector<double>(basis.af));
  for (int r = 0; r < basis.af; ++r)
    for (int c = 0; c < basis.af; ++c) rows[r][c] = basis.matrix(r, c);
  j["matrix"] = rows;
  detail::write_json(path, j);
}

inline EncodingBasis read_basis(const std::filesystem::path& path) {
  const ordered_json j = detail::parse_json(path);
  EncodingBasis basis;
  basis.af = detail::get_field<int>(j, "af", path.string());
  const auto rows = detail::get_field<std::vector<std::vector<double>>>(j, "matrix", path.string());
  if (basis.af < 1 || static_cast<int>(rows.size()) != basis.af) throw CorruptFile(path.string() + ": matrix must be af x af");
  basis.matrix.resize(basis.af, basis.af);
  for (int r = 0; r < basis.af; ++r) {
    if (static_cast<int>(rows[r].size()) != basis.af) throw CorruptFile(path.string() + ": matrix must be af x af");
    for (int c = 0; c < basis.af; ++c) basis.matrix(r, c) = rows[r][c];
  }
  validate_basis(basis);
  return basis;
}

// ---------------------------------------------------------------------------
// Solver configuration. Exactly the listed keys; anything else is an error.

inline const std::vector<std::string>& config_fields() {
  static const std::vector<std::string> fields = {"lambda",         "lambda_tv",      "rho1",
                                                  "rho2",           "n_iter",         "epsilon",
                                                  "bp_inner_iters", "tv_inner_iters", "tikhonov_mu"};
  return fields;
}

inline ordered_json config_to_json(const SolverConfig& c) {
  ordered_json j;
  j["lambda"] = c.lambda;
  j["lambda_tv"] = c.lambda_tv;
  j["rho1"] = c.rho1;
  j["rho2"] = c.rho2;
  j["n_iter"] = c.n_iter;
  j["epsilon"] = c.epsilon;
  j["bp_inner_iters"] = c.bp_inner_iters;
  j["tv_inner_iters"] = c.tv_inner_iters;
  j["tikhonov_mu"] = c.tikhonov_mu;
  return j;
}

inline SolverConfig config_from_json(const ordered_json& j, const std::string& where = "config") {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  const auto& fields = config_fields();
  for (const auto& [key, value] : j.items())
    if (std::find(fields.begin(), fields.end(), key) == fields.end())
      throw ConfigError(where + ": unknown config field \"" + key + "\"");
  for (const auto& f : fields)
    if (!j.contains(f)) throw ConfigError(where + ": missing config field \"" + f + "\"");
  auto number = [&](const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(where + ": config field \"" + std::string(key) + "\" must be a number");
    return v.get<double>();
  };
  auto integer = [&](const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer()) throw ConfigError(where + ": config field \"" + std::string(key) + "\" must be an integer");
    return v.get<int>();
  };
  SolverConfig c;
  c.lambda = number("lambda");
  c.lambda_tv = number("lambda_tv");
  c.rho1 = number("rho1");
  c.rho2 = number("rho2");
  c.n_iter = integer("n_iter");
  c.epsilon = number("epsilon");
  c.bp_inner_iters = integer("bp_inner_iters");
  c.tv_inner_iters = integer("tv_inner_iters");
  c.tikhonov_mu = number("tikhonov_mu");
  c.validate();
  return c;
}

inline void write_config(const std::filesystem::path& path, const SolverConfig& c) {
  detail::write_json(path, config_to_json(c));
}

inline SolverConfig read_config(const std::filesystem::path& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.string());
}

// ---------------------------------------------------------------------------
// Reports, dictionary export, CSV summaries

inline ordered_json report_to_json(const ReconReport& r) {
  ordered_json j;
  j["iterations_run"] = r.iterations_run;
  j["rel_change_history"] = r.rel_change_history;
  ordered_json hist = ordered_json::array();
  for (const auto& o : r.objective_history) hist.push_back({{"data", o.data}, {"l1", o.l1}, {"tv", o.tv}});
  j["objective_history"] = hist;
  j["wall_time"] = r.wall_time;
  return j;
}

inline void write_report(const std::filesystem::path& path, const ReconReport& r) {
  detail::write_json(path, report_to_json(r));
}

// <stem>.json header plus <stem>.f64: little-endian doubles, column-major
// (all N_q entries of atom 0, then atom 1, ...).
inline void write_dictionary(const std::filesystem::path& stem, const RidgeletDictionary& d) {
  ordered_json header;
  header["N_q"] = d.n_q();
  header["M"] = d.n_atoms();
  header["rho"] = d.rho;
  header["n_max"] = d.n_max;
  header["levels"] = d.levels;
  header["orientations_per_level"] = d.orientations_per_level;
  std::string payload(static_cast<std::size_t>(d.matrix.size()) * 8, '\0');
  std::size_t i = 0;
  for (Eigen::Index m = 0; m < d.n_atoms(); ++m)
    for (Eigen::Index j = 0; j < d.n_q(); ++j, ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(d.matrix(j, m));
      for (int b = 0; b < 8; ++b) payload[8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  detail::write_json(detail::with_suffix(stem, ".json"), header);
  detail::write_bytes(detail::with_suffix(stem, ".f64"), payload);
}

struct CsvRow {
  std::string scheme, metric, statistic;
  double value = 0.0;
};

inline constexpr const char* kCsvHeader = "scheme,metric,statistic,value";

inline std::string csv_text(const std::vector<CsvRow>& rows) {
  std::string text = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) text += r.scheme + "," + r.metric + "," + r.statistic + "," + format_double(r.value) + "\n";
  return text;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows) {
  detail::write_bytes(path, csv_text(rows));
}

inline std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::istringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(path.string() + ": missing CSV header");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ls(line);
    std::string part;
    while (std::getline(ls, part, ',')) parts.push_back(part);
    if (parts.size() != 4) throw ParseError(path.string() + ": malformed CSV row");
    rows.push_back({parts[0], parts[1], parts[2], std::strtod(parts[3].c_str(), nullptr)});
  }
  return rows;
}

}  // namespace gsr::io
