#include "formats.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace strata::cli {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double num(const json& j, const std::string& what) {
  if (j.is_null()) return kNaN;
  if (!j.is_number()) throw UsageError(what + ": expected a number");
  return j.get<double>();
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("field '") + key + "' has the wrong type");
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw UsageError(what + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end())
      throw UsageError(what + ": unknown field '" + k + "'");
  }
}

json tables_to_json(const std::vector<Matrix>& t) {
  json out = json::array();
  for (const auto& m : t) out.push_back(matrix_to_json(m));
  return out;
}

json nested_to_json(const std::vector<std::vector<Matrix>>& t) {
  json out = json::array();
  for (const auto& v : t) out.push_back(tables_to_json(v));
  return out;
}

std::vector<Matrix> tables_from_json(const json& j, std::size_t count, const std::string& what) {
  if (!j.is_array() || j.size() != count) throw UsageError(what + ": expected " + std::to_string(count) + " tables");
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(matrix_from_json(j[i], what));
  return out;
}

json ve_to_json(const std::vector<EffectValue>& v) {
  json out = json::array();
  for (const auto& e : v) out.push_back({{"label", e.spec.label()}, {"value", e.value}});
  return out;
}

json ve_table_to_json(const VeTable& t) {
  return {{"ve_S", matrix_to_json(t.ve_S)}, {"ve_I", ve_to_json(t.ve_I)}, {"ve_I_conditional", ve_to_json(t.ve_I_cond)}};
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json summary(const Vector& col) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < col.size(); ++i)
    if (std::isfinite(col(i))) v.push_back(col(i));
  double mean = kNaN, sd = kNaN;
  if (!v.empty()) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return {{"mean", mean},
          {"sd", sd},
          {"q025", quantile(v, 0.025)},
          {"q50", quantile(v, 0.5)},
          {"q975", quantile(v, 0.975)},
          {"undefined_draws", static_cast<long>(col.size()) - static_cast<long>(v.size())}};
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw UsageError("CSV line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

long parse_long(const std::string& s, std::size_t line_no, const char* col) {
  long v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end)
    throw UsageError("CSV line " + std::to_string(line_no) + ": column " + col + " is not an integer: '" + s + "'");
  return v;
}

void append_int(std::string& out, long v) {
  char buf[24];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, p);
}

}  // namespace

std::string tool_version() { return "0.3.0"; }

json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": malformed JSON: " + e.what());
  }
}

void require_schema(const json& j, std::string_view expected) {
  if (!j.is_object() || !j.contains("schema")) throw UsageError("missing \"schema\" field (expected " + std::string(expected) + ")");
  if (!j["schema"].is_string() || j["schema"].get<std::string>() != expected)
    throw UsageError("unsupported schema " + j["schema"].dump() + " (expected " + std::string(expected) + ")");
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_writable(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw UsageError(path.string() + " exists; pass --force to overwrite");
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

int available_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("STRATA_ID_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

json shape_to_json(const TrialShape& s) { return {{"n_z", s.n_z}, {"n_r", s.n_r}, {"n_a", s.n_a}, {"n_x", s.n_x}}; }

TrialShape shape_from_json(const json& j) {
  check_keys(j, {"n_z", "n_r", "n_a", "n_x"}, "shape");
  TrialShape s;
  s.n_z = get_or(j, "n_z", 2);
  s.n_r = get_or(j, "n_r", 1);
  s.n_a = get_or(j, "n_a", 1);
  s.n_x = get_or(j, "n_x", 1);
  s.validate();
  return s;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      if (std::isnan(m(i, k)))
        row.push_back(nullptr);
      else
        row.push_back(m(i, k));
    }
    out.push_back(std::move(row));
  }
  return out;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw UsageError(what + ": expected an array of rows");
  const auto rows = j.size(), cols = j[0].size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw UsageError(what + ": ragged rows");
    for (std::size_t k = 0; k < cols; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = num(j[i][k], what);
  }
  return m;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw UsageError(what + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(j[i], what);
  return v;
}

json params_to_json(const PopulationParams& p) {
  json j;
  j["schema"] = kSchemaParams;
  j["shape"] = shape_to_json(p.shape);
  j["theta"] = tables_to_json(p.theta);
  j["a"] = tables_to_json(p.a);
  j["beta"] = nested_to_json(p.beta);
  j["sn_S"] = p.sn_S;
  j["sp_S"] = p.sp_S;
  j["sn_Y"] = p.sn_Y;
  j["sp_Y"] = p.sp_Y;
  j["x_dist"] = vector_to_json(p.x_dist);
  j["z_dist"] = vector_to_json(p.z_dist);
  j["site_dist"] = vector_to_json(p.site_dist);
  j["a_kernel"] = p.a_kernel ? matrix_to_json(*p.a_kernel) : json(nullptr);
  return j;
}

PopulationParams params_from_json(const json& j) {
  require_schema(j, kSchemaParams);
  check_keys(j, {"schema", "shape", "theta", "a", "beta", "sn_S", "sp_S", "sn_Y", "sp_Y", "x_dist", "z_dist", "site_dist",
                 "a_kernel", "source"},
             "params");
  for (const char* k : {"shape", "theta", "a", "beta"})
    if (!j.contains(k)) throw UsageError(std::string("params: missing field '") + k + "'");
  PopulationParams p = PopulationParams::zeros(shape_from_json(j["shape"]));
  const auto nx = static_cast<std::size_t>(p.shape.n_x);
  p.theta = tables_from_json(j["theta"], nx, "theta");
  p.a = tables_from_json(j["a"], nx, "a");
  if (!j["beta"].is_array() || j["beta"].size() != nx) throw UsageError("beta: expected one entry per x level");
  for (std::size_t x = 0; x < nx; ++x)
    p.beta[x] = tables_from_json(j["beta"][x], static_cast<std::size_t>(p.shape.n_z), "beta");
  p.sn_S = get_or(j, "sn_S", 1.0);
  p.sp_S = get_or(j, "sp_S", 1.0);
  p.sn_Y = get_or(j, "sn_Y", 1.0);
  p.sp_Y = get_or(j, "sp_Y", 1.0);
  if (j.contains("x_dist")) p.x_dist = vector_from_json(j["x_dist"], "x_dist");
  if (j.contains("z_dist")) p.z_dist = vector_from_json(j["z_dist"], "z_dist");
  if (j.contains("site_dist")) p.site_dist = vector_from_json(j["site_dist"], "site_dist");
  if (j.contains("a_kernel") && !j["a_kernel"].is_null()) p.a_kernel = matrix_from_json(j["a_kernel"], "a_kernel");
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("params: ") + e.what());
  }
  return p;
}

json cells_to_json(const CellCounts& c) {
  json rows = json::array();
  const TrialShape& s = c.shape;
  for (int x = 0; x < s.n_x; ++x)
    for (int z = 0; z < s.n_z; ++z)
      for (int r = 0; r < s.n_r; ++r)
        for (int sv = 0; sv < 2; ++sv)
          for (int y = 0; y < 2; ++y)
            for (int k = 0; k < s.n_a; ++k) {
              const double n = c.n[c.index(x, z, r, sv, y, k)];
              if (n != 0.0) rows.push_back({x + 1, z + 1, r + 1, sv, y, k + 1, n});
            }
  return {{"schema", kSchemaCells},
          {"shape", shape_to_json(s)},
          {"columns", {"x", "z", "r", "s_obs", "y_obs", "a_obs", "n"}},
          {"cells", rows}};
}

CellCounts cells_from_json(const json& j) {
  require_schema(j, kSchemaCells);
  check_keys(j, {"schema", "shape", "columns", "cells"}, "cells");
  if (!j.contains("shape") || !j.contains("cells")) throw UsageError("cells: needs 'shape' and 'cells'");
  CellCounts c = CellCounts::zeros(shape_from_json(j["shape"]));
  const TrialShape& s = c.shape;
  if (!j["cells"].is_array()) throw UsageError("cells: 'cells' must be an array");
  for (const auto& row : j["cells"]) {
    if (!row.is_array() || row.size() != 7) throw UsageError("cells: each entry is [x, z, r, s_obs, y_obs, a_obs, n]");
    for (const auto& v : row)
      if (!v.is_number()) throw UsageError("cells: entries must be numbers");
    const int x = row[0].get<int>() - 1, z = row[1].get<int>() - 1, r = row[2].get<int>() - 1;
    const int sv = row[3].get<int>(), y = row[4].get<int>(), k = row[5].get<int>() - 1;
    const double n = row[6].get<double>();
    if (x < 0 || x >= s.n_x || z < 0 || z >= s.n_z || r < 0 || r >= s.n_r || k < 0 || k >= s.n_a || sv < 0 || sv > 1 ||
        y < 0 || y > 1)
      throw UsageError("cells: label out of range for the declared shape");
    if (!(n >= 0.0) || !std::isfinite(n)) throw UsageError("cells: counts must be nonnegative");
    c.n[c.index(x, z, r, sv, y, k)] += n;
  }
  return c;
}

std::string dataset_csv(const TrialDataset& data, bool oracle) {
  std::string out = oracle ? "id,z,r,x,a_obs,s_obs,y_obs,a_true,stratum,y_true\n" : "id,z,r,x,a_obs,s_obs,y_obs\n";
  out.reserve(out.size() + data.records.size() * (oracle ? 32 : 24));
  long id = 0;
  for (const auto& rec : data.records) {
    append_int(out, ++id);
    for (long v : {rec.z + 1L, rec.r + 1L, rec.x + 1L, rec.a_obs + 1L, static_cast<long>(rec.s_obs), static_cast<long>(rec.y_obs)}) {
      out += ',';
      append_int(out, v);
    }
    if (oracle)
      for (long v : {rec.a_true + 1L, static_cast<long>(rec.stratum), static_cast<long>(rec.y_true)}) {
        out += ',';
        append_int(out, v);
      }
    out += '\n';
  }
  return out;
}

CellCounts cells_from_csv(const std::string& text, const std::optional<TrialShape>& shape) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw UsageError("CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line, 1);
  const char* need[] = {"id", "z", "r", "x", "a_obs", "s_obs", "y_obs"};
  int col[7];
  for (int i = 0; i < 7; ++i) {
    auto it = std::find(header.begin(), header.end(), need[i]);
    if (it == header.end()) throw UsageError(std::string("CSV: missing column '") + need[i] + "'");
    col[i] = static_cast<int>(it - header.begin());
  }

  struct Row {
    int z, r, x, a, s, y;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line, line_no);
    if (f.size() != header.size()) throw UsageError("CSV line " + std::to_string(line_no) + ": wrong number of fields");
    Row r{};
    r.z = static_cast<int>(parse_long(f[static_cast<std::size_t>(col[1])], line_no, "z"));
    r.r = static_cast<int>(parse_long(f[static_cast<std::size_t>(col[2])], line_no, "r"));
    r.x = static_cast<int>(parse_long(f[static_cast<std::size_t>(col[3])], line_no, "x"));
    r.a = static_cast<int>(parse_long(f[static_cast<std::size_t>(col[4])], line_no, "a_obs"));
    r.s = static_cast<int>(parse_long(f[static_cast<std::size_t>(col[5])], line_no, "s_obs"));
    r.y = static_cast<int>(parse_long(f[static_cast<std::size_t>(col[6])], line_no, "y_obs"));
    if (r.z < 1 || r.r < 1 || r.x < 1 || r.a < 1)
      throw UsageError("CSV line " + std::to_string(line_no) + ": z, r, x and a_obs are 1-based labels");
    if ((r.s != 0 && r.s != 1) || (r.y != 0 && r.y != 1))
      throw UsageError("CSV line " + std::to_string(line_no) + ": s_obs and y_obs must be 0 or 1");
    rows.push_back(r);
  }
  if (rows.empty()) throw UsageError("CSV: no data rows");

  TrialShape s;
  if (shape) {
    s = *shape;
  } else {
    s = {2, 1, 1, 1};
    for (const auto& r : rows) {
      s.n_z = std::max(s.n_z, r.z);
      s.n_r = std::max(s.n_r, r.r);
      s.n_a = std::max(s.n_a, r.a);
      s.n_x = std::max(s.n_x, r.x);
    }
  }
  s.validate();
  CellCounts c = CellCounts::zeros(s);
  for (const auto& r : rows) {
    if (r.z > s.n_z || r.r > s.n_r || r.x > s.n_x || r.a > s.n_a) throw UsageError("CSV: label exceeds the declared shape");
    c.n[c.index(r.x - 1, r.z - 1, r.r - 1, r.s, r.y, r.a - 1)] += 1.0;
  }
  return c;
}

DesignInput design_from_json(const json& j) {
  require_schema(j, kSchemaDesign);
  check_keys(j, {"schema", "theorem", "sn_S", "sp_S", "P_A_given_strata", "P_strata_given_R", "scenario", "seed", "x",
                 "measure_A_with_error", "description"},
             "design");
  DesignInput d;
  try {
    d.theorem = parse_theorem(get_or<std::string>(j, "theorem", "T2"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("design: ") + e.what());
  }
  if (j.contains("scenario")) {
    if (j.contains("P_A_given_strata") || j.contains("P_strata_given_R"))
      throw UsageError("design: give either a scenario or explicit factor matrices, not both");
    Scenario sc;
    try {
      sc = parse_scenario(j["scenario"].get<std::string>());
    } catch (const std::exception& e) {
      throw UsageError(std::string("design: ") + e.what());
    }
    const bool a_err = get_or(j, "measure_A_with_error", false);
    const SimConfig cfg = scenario_config(sc, 1, get_or<std::uint64_t>(j, "seed", 1), a_err);
    const GeneratedParams g = gen_params(cfg);
    const int x = get_or(j, "x", 1) - 1;
    if (x < 0 || x >= cfg.shape.n_x) throw UsageError("design: x level out of range");
    d.P_A_given_strata = g.population.a[static_cast<std::size_t>(x)];
    if (a_err) d.P_A_given_strata = cfg.a_error_kernel->transpose() * d.P_A_given_strata;
    d.P_strata_given_R = g.population.theta[static_cast<std::size_t>(x)];
    d.sn_S = cfg.misclass.sn_S;
    d.sp_S = cfg.misclass.sp_S;
  } else {
    if (!j.contains("P_A_given_strata") || !j.contains("P_strata_given_R"))
      throw UsageError("design: needs P_A_given_strata and P_strata_given_R (or a scenario)");
    d.P_A_given_strata = matrix_from_json(j["P_A_given_strata"], "P_A_given_strata");
    d.P_strata_given_R = matrix_from_json(j["P_strata_given_R"], "P_strata_given_R");
  }
  d.sn_S = get_or(j, "sn_S", d.sn_S);
  d.sp_S = get_or(j, "sp_S", d.sp_S);
  return d;
}

json report_to_json(const DesignCheckReport& r) {
  const MinimumDesign md = minimum_design(r.n_z);
  return {{"schema", kSchemaReport},
          {"theorem", to_string(r.theorem)},
          {"n_z", r.n_z},
          {"n_a", r.n_a},
          {"n_r", r.n_r},
          {"krank_A", r.krank_A},
          {"krank_required", r.krank_required},
          {"krank_margin", r.krank_margin},
          {"rank_SR", r.rank_SR},
          {"rank_required", r.rank_required},
          {"half_interval_ok", r.half_interval_ok},
          {"near_deficient", r.near_deficient},
          {"minimum_design", {{"sites", md.min_sites}, {"covariate_levels", md.min_covariate_levels}}},
          {"passed", r.passed},
          {"messages", r.messages}};
}

SimConfig sim_config_from_json(const json& j) {
  require_schema(j, kSchemaSim);
  check_keys(j, {"schema", "scenario", "n", "seed", "measure_A_with_error", "households", "misclass", "dirichlet_strata",
                 "dirichlet_covariate", "a_error_kernel", "shape", "effects"},
             "sim config");
  Scenario sc;
  try {
    sc = parse_scenario(get_or<std::string>(j, "scenario", "two_arm_severe"));
  } catch (const std::exception& e) {
    throw UsageError(std::string("sim config: ") + e.what());
  }
  SimConfig c = scenario_config(sc, get_or(j, "n", 1000L), get_or<std::uint64_t>(j, "seed", 1),
                                get_or(j, "measure_A_with_error", false));
  if (j.contains("shape")) c.shape = shape_from_json(j["shape"]);
  if (j.contains("misclass")) {
    const json& m = j["misclass"];
    check_keys(m, {"sn_S", "sp_S", "sn_Y", "sp_Y"}, "misclass");
    c.misclass.sn_S = get_or(m, "sn_S", c.misclass.sn_S);
    c.misclass.sp_S = get_or(m, "sp_S", c.misclass.sp_S);
    c.misclass.sn_Y = get_or(m, "sn_Y", c.misclass.sn_Y);
    c.misclass.sp_Y = get_or(m, "sp_Y", c.misclass.sp_Y);
  }
  if (j.contains("dirichlet_strata")) c.dirichlet_strata = j["dirichlet_strata"].get<std::vector<double>>();
  c.dirichlet_covariate = get_or(j, "dirichlet_covariate", c.dirichlet_covariate);
  if (j.contains("a_error_kernel")) {
    c.a_error_kernel = matrix_from_json(j["a_error_kernel"], "a_error_kernel");
    c.measure_A_with_error = true;
  }
  if (j.contains("effects")) {
    const json& e = j["effects"];
    check_keys(e, {"alpha", "delta", "omega"}, "effects");
    const auto R = c.shape.strata();
    EffectSettings eff;
    if (!e.contains("alpha") || !e["alpha"].is_array() || e["alpha"].size() != R)
      throw UsageError("effects: alpha needs one row per stratum");
    for (const auto& row : e["alpha"]) {
      std::vector<double> v;
      for (const auto& a : row) v.push_back(num(a, "alpha"));
      eff.alpha.push_back(v);
    }
    eff.delta.assign(R, std::vector<std::vector<double>>(static_cast<std::size_t>(c.shape.n_z),
                                                         std::vector<double>(static_cast<std::size_t>(c.shape.n_a), 0.0)));
    if (e.contains("delta")) {
      const json& d = e["delta"];
      if (!d.is_array() || d.size() != R) throw UsageError("effects: delta needs one entry per stratum");
      for (std::size_t u = 0; u < R; ++u) eff.delta[u] = d[u].get<std::vector<std::vector<double>>>();
    }
    eff.omega = e.contains("omega") ? matrix_from_json(e["omega"], "omega") : Matrix::Zero(c.shape.n_x, c.shape.n_z);
    c.effects = eff;
  }
  if (get_or(j, "households", false)) c = household_mapping(c);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("sim config: ") + e.what());
  }
  return c;
}

json sim_config_to_json(const SimConfig& c) {
  json alpha = json::array();
  for (const auto& row : c.effects.alpha) {
    json r = json::array();
    for (double v : row) r.push_back(std::isnan(v) ? json(nullptr) : json(v));
    alpha.push_back(r);
  }
  return {{"schema", kSchemaSim},
          {"scenario", to_string(c.scenario)},
          {"n", c.n},
          {"seed", c.seed},
          {"shape", shape_to_json(c.shape)},
          {"measure_A_with_error", c.measure_A_with_error},
          {"households", c.households},
          {"misclass", {{"sn_S", c.misclass.sn_S}, {"sp_S", c.misclass.sp_S}, {"sn_Y", c.misclass.sn_Y}, {"sp_Y", c.misclass.sp_Y}}},
          {"dirichlet_strata", c.dirichlet_strata},
          {"dirichlet_covariate", c.dirichlet_covariate},
          {"a_error_kernel", c.a_error_kernel ? matrix_to_json(*c.a_error_kernel) : json(nullptr)},
          {"effects", {{"alpha", alpha}, {"delta", c.effects.delta}, {"omega", matrix_to_json(c.effects.omega)}}}};
}

void apply_priors(const json& j, PriorConfig& p) {
  require_schema(j, kSchemaPriors);
  check_keys(j, {"schema", "sn_S", "sp_S", "sn_Y", "sp_Y", "sd_alpha", "sd_nu_wide", "sd_nu", "sd_gamma", "sd_eta", "sd_omega",
                 "sd_mu", "mu_lead_mean"},
             "priors");
  auto beta = [&](const char* key, ShiftedBeta& b) {
    if (!j.contains(key)) return;
    const json& v = j[key];
    check_keys(v, {"lo", "hi", "a", "b"}, key);
    b.lo = get_or(v, "lo", b.lo);
    b.hi = get_or(v, "hi", b.hi);
    b.a = get_or(v, "a", b.a);
    b.b = get_or(v, "b", b.b);
  };
  beta("sn_S", p.sn_S);
  beta("sp_S", p.sp_S);
  beta("sn_Y", p.sn_Y);
  beta("sp_Y", p.sp_Y);
  p.sd_alpha = get_or(j, "sd_alpha", p.sd_alpha);
  p.sd_nu_wide = get_or(j, "sd_nu_wide", p.sd_nu_wide);
  p.sd_nu = get_or(j, "sd_nu", p.sd_nu);
  p.sd_gamma = get_or(j, "sd_gamma", p.sd_gamma);
  p.sd_eta = get_or(j, "sd_eta", p.sd_eta);
  p.sd_omega = get_or(j, "sd_omega", p.sd_omega);
  p.sd_mu = get_or(j, "sd_mu", p.sd_mu);
  p.mu_lead_mean = get_or(j, "mu_lead_mean", p.mu_lead_mean);
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("priors: ") + e.what());
  }
}

json priors_to_json(const PriorConfig& p) {
  auto beta = [](const ShiftedBeta& b) { return json{{"lo", b.lo}, {"hi", b.hi}, {"a", b.a}, {"b", b.b}}; };
  return {{"schema", kSchemaPriors},   {"sn_S", beta(p.sn_S)},     {"sp_S", beta(p.sp_S)},
          {"sn_Y", beta(p.sn_Y)},      {"sp_Y", beta(p.sp_Y)},     {"sd_alpha", p.sd_alpha},
          {"sd_nu_wide", p.sd_nu_wide}, {"sd_nu", p.sd_nu},         {"sd_gamma", p.sd_gamma},
          {"sd_eta", p.sd_eta},        {"sd_omega", p.sd_omega},   {"sd_mu", p.sd_mu},
          {"mu_lead_mean", p.mu_lead_mean}};
}

json identified_to_json(const IdentifiedQuantities& id) {
  json j;
  j["schema"] = kSchemaIdentified;
  j["shape"] = shape_to_json(id.shape);
  j["mode_used"] = to_string(id.mode_used);
  j["sn_S"] = id.sn_S_hat;
  j["sp_S"] = id.sp_S_hat;
  j["sp_Y"] = id.sp_Y_hat;
  j["sn_Y_known"] = id.sn_Y_known ? json(*id.sn_Y_known) : json(nullptr);
  j["theta"] = tables_to_json(id.theta_hat);
  j["a"] = tables_to_json(id.a_hat);
  j["p_tilde"] = nested_to_json(id.p_tilde);
  j["beta"] = id.beta_hat ? nested_to_json(*id.beta_hat) : json(nullptr);
  j["beta_lo"] = nested_to_json(id.beta_lo);
  j["beta_hi"] = nested_to_json(id.beta_hi);
  j["sn_Y_region"] = {id.snY_region.lo, id.snY_region.hi};
  j["ve"] = ve_table_to_json(id.ve);
  j["max_residual"] = id.max_residual;
  j["cp_restarts"] = id.cp_restarts;
  j["permutation_resolved"] = id.permutation_resolved;
  return j;
}

json truth_errors(const IdentifiedQuantities& id, const PopulationParams& P) {
  double theta = 0.0, a = 0.0;
  for (std::size_t x = 0; x < P.theta.size(); ++x) {
    theta = std::max(theta, (id.theta_hat[x] - P.theta[x]).cwiseAbs().maxCoeff());
    const Matrix a_true = P.a_kernel ? Matrix(P.a_kernel->transpose() * P.a[x]) : P.a[x];
    a = std::max(a, (id.a_hat[x] - a_true).cwiseAbs().maxCoeff());
  }
  const VeTable tv = ve_estimands(P);
  double ve_s = 0.0, ve_i = 0.0;
  for (Eigen::Index r = 0; r < tv.ve_S.rows(); ++r)
    for (Eigen::Index c = 0; c < tv.ve_S.cols(); ++c)
      if (std::isfinite(tv.ve_S(r, c))) ve_s = std::max(ve_s, std::abs(tv.ve_S(r, c) - id.ve.ve_S(r, c)));
  for (std::size_t i = 0; i < tv.ve_I.size() && i < id.ve.ve_I.size(); ++i)
    if (std::isfinite(tv.ve_I[i].value)) ve_i = std::max(ve_i, std::abs(tv.ve_I[i].value - id.ve.ve_I[i].value));
  const double sn = std::abs(id.sn_S_hat - P.sn_S), sp = std::abs(id.sp_S_hat - P.sp_S), spy = std::abs(id.sp_Y_hat - P.sp_Y);
  const double all = std::max({theta, a, sn, sp, spy, ve_s, ve_i});
  return {{"theta", theta}, {"a", a}, {"sn_S", sn}, {"sp_S", sp}, {"sp_Y", spy}, {"ve_S", ve_s}, {"ve_I", ve_i}, {"max", all}};
}

json fit_to_json(const FitResult& fit, const SamplerConfig& cfg, const PriorConfig& priors,
                 const std::optional<Decision>& decision, const std::optional<DecisionRule>& rule) {
  json j;
  j["schema"] = kSchemaFit;
  j["shape"] = shape_to_json(fit.shape);
  j["sampler"] = {{"chains", cfg.chains}, {"warmup", cfg.warmup}, {"iters", cfg.iters}, {"seed", cfg.seed},
                  {"target_accept", cfg.target_accept}, {"optimize_init", cfg.optimize_init}};
  j["priors"] = priors_to_json(priors);
  json wide = json::array();
  for (std::size_t u : fit.wide_nu_strata) wide.push_back(stratum_from_index(u, fit.shape.n_z).to_string());
  j["wide_nu_strata"] = wide;

  json point = json::object(), params = json::array();
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    point[fit.names[i]] = fit.point(c);
    json s = summary(fit.draws.col(c));
    s["name"] = fit.names[i];
    s["rhat"] = fit.diagnostics.rhat(c);
    s["ess_bulk"] = fit.diagnostics.ess_bulk(c);
    s["ess_tail"] = fit.diagnostics.ess_tail(c);
    params.push_back(s);
  }
  j["point"] = point;
  j["point_log_posterior"] = fit.point_log_posterior;
  j["parameters"] = params;

  const ShiftedBeta* sup[4] = {&priors.sn_S, &priors.sp_S, &priors.sn_Y, &priors.sp_Y};
  const char* rate_names[4] = {"sn_S", "sp_S", "sn_Y", "sp_Y"};
  json rates = json::object();
  for (int r = 0; r < 4; ++r) {
    Vector v(fit.draws.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rate_from_unconstrained(*sup[r], fit.draws(i, r));
    rates[rate_names[r]] = summary(v);
  }
  j["rates"] = rates;

  json est = json::array();
  for (std::size_t e = 0; e < fit.estimands.size(); ++e) {
    json s = summary(fit.estimand_draws.col(static_cast<Eigen::Index>(e)));
    s["label"] = fit.estimands[e].label();
    est.push_back(s);
  }
  j["estimands"] = est;

  long below = 0;
  for (Eigen::Index i = 0; i < fit.diagnostics.rhat.size(); ++i) below += fit.diagnostics.rhat(i) < 1.01;
  j["diagnostics"] = {{"max_rhat", fit.diagnostics.max_rhat()},
                      {"min_ess_bulk", fit.diagnostics.min_ess_bulk()},
                      {"min_ess_tail", fit.diagnostics.min_ess_tail()},
                      {"acceptance_rate", fit.diagnostics.acceptance_rate},
                      {"share_rhat_below_1_01",
                       fit.diagnostics.rhat.size() ? static_cast<double>(below) / static_cast<double>(fit.diagnostics.rhat.size()) : 1.0},
                      {"sn_Y_prior_dominated", fit.sn_Y_prior_dominated},
                      {"draws", fit.draws.rows()}};
  if (decision && rule) {
    json th = json::array();
    for (const auto& t : rule->thresholds) th.push_back({{"estimand", t.estimand.label()}, {"cutoff", t.cutoff}});
    j["decision"] = {{"rule", rule->name},
                     {"thresholds", th},
                     {"posterior_prob_cutoff", rule->posterior_prob_cutoff},
                     {"posterior_prob", decision->posterior_prob},
                     {"reject", decision->reject}};
  }
  return j;
}

void write_draws_gz(const fs::path& path, const FitResult& fit) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  gzFile f = gzopen(path.string().c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::string line = "chain,iter";
  for (const auto& n : fit.names) line += ",\"" + n + "\"";
  line += '\n';
  bool ok = gzwrite(f, line.data(), static_cast<unsigned>(line.size())) > 0;
  for (Eigen::Index i = 0; i < fit.draws.rows() && ok; ++i) {
    line.clear();
    append_int(line, i / fit.iters + 1);
    line += ',';
    append_int(line, i % fit.iters + 1);
    for (Eigen::Index c = 0; c < fit.draws.cols(); ++c) {
      line += ',';
      line += format_double(fit.draws(i, c));
    }
    line += '\n';
    ok = gzwrite(f, line.data(), static_cast<unsigned>(line.size())) > 0;
  }
  if (gzclose(f) != Z_OK || !ok) throw std::runtime_error("write failed for " + path.string());
}

std::string power_csv(const PowerResult& r) {
  std::string out = "trial,measurements,n,power,ci_lo,ci_hi\n";
  for (const auto& row : r.rows) {
    out += row.trial + ',' + row.measurement + ',' + std::to_string(row.n) + ',' + format_double(row.power) + ',' +
           format_double(row.ci_lo) + ',' + format_double(row.ci_hi) + '\n';
  }
  return out;
}

std::string replicates_csv(const PowerResult& r) {
  std::string out = "n,rep,ok,reject,posterior_prob,truth,ci_lo,ci_hi,covered,max_rhat,error\n";
  for (const auto& o : r.replicates) {
    std::string err = o.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out += std::to_string(o.n) + ',' + std::to_string(o.rep) + ',' + (o.ok ? "1" : "0") + ',' + (o.reject ? "1" : "0") + ',' +
           format_double(o.posterior_prob) + ',' + format_double(o.truth) + ',' + format_double(o.credible.lo) + ',' +
           format_double(o.credible.hi) + ',' + (o.covered ? "1" : "0") + ',' + format_double(o.max_rhat) + ",\"" + err + "\"\n";
  }
  return out;
}

json manifest_to_json(const Manifest& m) {
  json outs = json::array();
  for (const auto& p : m.outputs) {
    const std::string bytes = read_text_file(p);
    outs.push_back({{"path", p.generic_string()}, {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}});
  }
  return {{"schema", kSchemaManifest},
          {"command", m.command},
          {"config", m.config},
          {"config_hash", hex64(fnv1a64(m.config.dump()))},
          {"master_seed", m.master_seed},
          {"tool_version", tool_version()},
          {"wall_clock_seconds", m.wall_clock_seconds},
          {"outputs", outs}};
}

}  // namespace strata::cli
