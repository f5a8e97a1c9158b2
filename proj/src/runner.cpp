#include <sieve/film.hpp>
#include <sieve/parallel.hpp>
#include <sieve/regime.hpp>
#include <sieve/runner.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace sieve {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Error invalid(const std::string& what) { return Error(ErrorKind::validation, what); }

// ---------------------------------------------------------------- schema

json merge_block(const json& in, const json& defaults, const std::string& path) {
  if (!in.is_object()) throw invalid("'" + path + "' must be a table");
  json out = defaults;
  for (const auto& [key, value] : in.items()) {
    if (!defaults.contains(key)) throw invalid("unknown key '" + path + "." + key + "'");
    const json& d = defaults.at(key);
    if (d.is_number() && !value.is_number())
      throw invalid("'" + path + "." + key + "' must be a number");
    if (d.is_string() && !value.is_string())
      throw invalid("'" + path + "." + key + "' must be a string");
    if (d.is_boolean() && !value.is_boolean())
      throw invalid("'" + path + "." + key + "' must be true or false");
    if (d.is_array() && !value.is_array())
      throw invalid("'" + path + "." + key + "' must be a list");
    out[key] = value;
  }
  return out;
}

const json& block_or_empty(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

Matrix matrix_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    throw invalid("'" + path + "' must be a non-empty list of rows");
  const auto rows = static_cast<Eigen::Index>(j.size()), cols = static_cast<Eigen::Index>(j[0].size());
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols)
      throw invalid("'" + path + "' rows must have equal length");
    for (Eigen::Index k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw invalid("'" + path + "' entries must be numbers");
      M(i, k) = j[i][k].get<double>();
    }
  }
  return M;
}

Vector vector_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw invalid("'" + path + "' must be a non-empty list");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw invalid("'" + path + "' entries must be numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

std::vector<double> doubles(const json& j, const std::string& path, bool allow_inf = false) {
  if (!j.is_array()) throw invalid("'" + path + "' must be a list");
  std::vector<double> out;
  for (const auto& v : j) {
    if (allow_inf && v.is_string() && (v == "inf" || v == "infinity")) {
      out.push_back(kInfinity);
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      throw invalid("'" + path + "' entries must be numbers" + (allow_inf ? " or \"inf\"" : ""));
    }
  }
  return out;
}

json normalize_density(const json& in, int n_default, double p_default, const std::string& path,
                       bool top) {
  if (!in.is_object()) throw invalid("'" + path + "' must be a table");
  const std::string kind = in.value("kind", std::string("power"));
  json d = {{"kind", kind}, {"beta", 0.0}};
  if (kind == "power") {
    d.update({{"m", 1}, {"n", n_default}, {"p", p_default}, {"coef", 1.0}});
  } else if (kind == "anisotropic") {
    d.update({{"matrix", json::array({json::array({1.0})})}, {"n", n_default}, {"p", p_default}});
  } else if (kind == "double_well") {
    d.update({{"matrix", json::array()}, {"p", p_default}});
  } else if (kind == "power_term") {
    d.update({{"m", 1}, {"n", n_default}, {"q", 1.0}, {"p", p_default}, {"coef", 1.0}});
  } else if (kind == "sum") {
    d.update({{"parts", json::array()}});
  } else {
    throw invalid("unknown density kind '" + kind + "'");
  }
  if (top) d["reg_schedule"] = json(SolveOptions{}.continuation);
  d = merge_block(in, d, path);
  if (kind == "sum") {
    if (d["parts"].empty()) throw invalid("'" + path + ".parts' must list the summands");
    json parts = json::array();
    for (std::size_t i = 0; i < d["parts"].size(); ++i)
      parts.push_back(normalize_density(d["parts"][i], n_default, p_default,
                                        path + ".parts[" + std::to_string(i) + "]", false));
    d["parts"] = parts;
  }
  if (kind == "double_well" && d["matrix"].empty())
    throw invalid("'" + path + ".matrix' is required for a double well");
  return d;
}

json sequence_json(const json& in, const std::string& path) {
  if (!in.is_object()) throw invalid("'" + path + "' must be a table");
  if (in.contains("values")) return merge_block(in, {{"values", json::array()}}, path);
  return merge_block(in, {{"base", 2.0}, {"exponent", -1.0}, {"coef", 1.0}}, path);
}

ScaleSequence sequence_from_json(const json& j, const std::string& path) {
  if (j.contains("values")) {
    auto v = doubles(j.at("values"), path + ".values");
    if (v.empty()) throw invalid("'" + path + ".values' must be non-empty");
    return ScaleSequence::list(v);
  }
  return ScaleSequence::power(j.at("base").get<double>(), j.at("exponent").get<double>(),
                              j.at("coef").get<double>());
}

void check_exponent(double p, int n) {
  if (!(p > 1.0 && p < n - 1.0)) {
    std::ostringstream os;
    os << "exponent must satisfy 1 < p < n-1 (p = " << p << ", n = " << n << ")";
    throw invalid(os.str());
  }
}

const std::map<std::string, std::vector<std::string>>& command_blocks() {
  static const std::map<std::string, std::vector<std::string>> blocks = {
      {"capacity", {"density", "geometry", "capacity"}},
      {"cell", {"density", "geometry", "solver", "cell"}},
      {"relax", {"density", "relax"}},
      {"regime", {"density", "geometry", "regime"}},
      {"film", {"density", "film"}},
      {"trend", {"density", "geometry", "solver", "regime", "trend"}},
      {"poincare", {"poincare"}},
      {"sweep", {"density", "geometry", "solver", "sweep"}},
  };
  return blocks;
}

json rectangle_json(const Rectangle& r) { return json::array({r.x0, r.x1, r.y0, r.y1}); }

Rectangle rectangle_from_json(const json& j, const std::string& path) {
  const auto v = doubles(j, path);
  if (v.size() != 4) throw invalid("'" + path + "' must be [x0, x1, y0, y1]");
  Rectangle r{v[0], v[1], v[2], v[3]};
  r.validate();
  return r;
}

SolveOptions solver_from(const json& cfg) {
  SolveOptions s;
  const json& b = cfg.at("solver");
  s.grad_tol = b.at("grad_tol").get<double>();
  s.max_iters = b.at("max_iters").get<int>();
  s.stage_tol = b.at("stage_tol").get<double>();
  s.memory = b.at("memory").get<int>();
  s.refresh_interval = b.at("refresh_interval").get<int>();
  s.continuation = doubles(cfg.at("density").at("reg_schedule"), "density.reg_schedule");
  s.validate();
  return s;
}

// ---------------------------------------------------------------- output

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json num(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

std::string vector_text(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_number(v[i]);
  return s;
}

std::string matrix_text(const Matrix& M) {
  std::string s;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    if (i) s += "; ";
    s += vector_text(M.row(i).transpose());
  }
  return s;
}

std::string csv_cell(const json& v) {
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return format_number(v.get<double>());
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return "";
}

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
};

json solve_json(const CellSolve& s) {
  const auto& d = s.diagnostics;
  return {{"N", s.N},
          {"phi", s.phi},
          {"nodes", s.nodes},
          {"iterations", d.total_iterations},
          {"converged", d.converged},
          {"monotone", d.monotone},
          {"grad_norm", d.grad_norm},
          {"initial_grad_norm", d.initial_grad_norm},
          {"regularized_energy", d.regularized_energy},
          {"regularization_gap", d.regularization_gap},
          {"trace_mean_dev", s.trace_mean_dev},
          {"trace_max_dev", s.trace_max_dev}};
}

CellSolve solve_from_json(const json& j) {
  CellSolve s;
  s.N = j.at("N").get<double>();
  s.phi = j.at("phi").get<double>();
  s.nodes = j.at("nodes").get<int>();
  auto& d = s.diagnostics;
  d.total_iterations = j.at("iterations").get<int>();
  d.converged = j.at("converged").get<bool>();
  d.monotone = j.at("monotone").get<bool>();
  d.grad_norm = j.at("grad_norm").get<double>();
  d.initial_grad_norm = j.at("initial_grad_norm").get<double>();
  d.regularized_energy = j.at("regularized_energy").get<double>();
  d.regularization_gap = j.at("regularization_gap").get<double>();
  d.final_energy = s.phi;
  s.trace_mean_dev = j.at("trace_mean_dev").get<double>();
  s.trace_max_dev = j.at("trace_max_dev").get<double>();
  return s;
}

std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------- run state

struct Context {
  Context(const json& c, fs::path o) : cfg(c), out(std::move(o)) {}

  const json& cfg;
  fs::path out;
  bool csv = true, json_out = false;
  std::optional<ResultCache> cache;
  std::vector<std::string> files, warnings;
  json operations = json::array();
  json results = json::object();
  bool flagged = false;

  void write(const Table& t) {
    const fs::path path = out / (t.name + ".csv");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
    os << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
      os << '\n';
    }
    if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
    files.push_back(path.filename().string());
    json rows = json::array();
    for (const auto& row : t.rows) {
      json o = json::object();
      for (std::size_t i = 0; i < row.size(); ++i) o[t.columns[i]] = row[i];
      rows.push_back(o);
    }
    results[t.name] = rows;
  }

  template <typename Fn>
  auto timed(const std::string& name, json& info, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&] {
      info["name"] = name;
      info["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      operations.push_back(info);
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto r = fn();
      finish();
      return r;
    }
  }

  void warn(const std::string& w) { warnings.push_back(w); }
};

CellProblemSpec cell_spec_from(const json& cfg, const std::string& regime, double ell, const Vector& z) {
  CellProblemSpec s;
  const json& g = cfg.at("geometry");
  s.regime = regime_from_string(regime);
  s.ell = ell;
  s.z = z;
  s.d = g.at("d").get<int>();
  s.density = density_from_json(cfg.at("density"));
  s.p = s.density->p();
  s.N_list = doubles(g.at("N_list"), "geometry.N_list");
  s.resolution = g.at("resolution").get<double>();
  s.grading = g.at("grading").get<double>();
  s.min_size_factor = g.at("min_size_factor").get<double>();
  s.mode = mesh_mode_from_string(g.at("mode").get<std::string>());
  s.solver = solver_from(cfg);
  if (s.z.size() != s.density->rows())
    throw invalid("jump z has " + std::to_string(s.z.size()) + " components, density has " +
                  std::to_string(s.density->rows()) + " rows");
  return s;
}

json cell_key(const json& cfg, const CellProblemSpec& spec, double N) {
  json geometry = cfg.at("geometry");
  geometry.erase("N_list");
  std::vector<double> z(spec.z.data(), spec.z.data() + spec.z.size());
  return {{"operation", "solve_cell"},
          {"version", kArtifactVersion},
          {"density", cfg.at("density")},
          {"geometry", geometry},
          {"solver", cfg.at("solver")},
          {"regime", to_string(spec.regime)},
          {"ell", spec.regime == Regime::finite ? spec.ell : 0.0},
          {"z", z},
          {"N", N}};
}

// Solves (or recalls) each (spec, N) point in parallel; provenance per point
// is recorded in `sources`.
std::vector<CellSolve> cached_solves(Context& ctx, const std::vector<std::pair<CellProblemSpec, double>>& points,
                                     std::vector<std::string>& sources) {
  std::vector<CellSolve> out(points.size());
  sources.assign(points.size(), "off");
  std::vector<std::vector<std::string>> warns(points.size());
  run_tasks(points.size(), [&](std::size_t i) {
    const auto& [spec, N] = points[i];
    const json key = cell_key(ctx.cfg, spec, N);
    if (ctx.cache) {
      if (auto hit = ctx.cache->lookup(key, warns[i])) {
        out[i] = *hit;
        sources[i] = "hit";
        return;
      }
      sources[i] = "miss";
    }
    out[i] = solve_cell(spec, N);
    if (ctx.cache) ctx.cache->store(key, out[i]);
  });
  for (auto& w : warns)
    for (auto& s : w) ctx.warn(s);
  for (const auto& s : out)
    if (!s.diagnostics.converged) ctx.flagged = true;
  return out;
}

std::vector<Vector> sample_jumps(std::mt19937_64& rng, int m, int count) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> radius(0.25, 2.0);
  std::vector<Vector> out;
  for (int k = 0; k < count; ++k) {
    Vector v(m);
    do {
      for (int i = 0; i < m; ++i) v[i] = normal(rng);
    } while (v.norm() < 1e-8);
    out.push_back(radius(rng) * v.normalized());
  }
  return out;
}

// ---------------------------------------------------------------- commands

void run_capacity(Context& ctx) {
  const json& c = ctx.cfg.at("capacity");
  const int d = ctx.cfg.at("geometry").at("d").get<int>();
  const double p = density_from_json(ctx.cfg.at("density")).p();
  const double r_in = c.at("r_in").get<double>();
  Table t{"capacity", {"d", "p", "r_in", "r_out", "capacity"}, {}};
  json info;
  ctx.timed("radial_capacity", info, [&] {
    for (double r_out : doubles(c.at("r_out"), "capacity.r_out", true))
      t.rows.push_back({d, p, r_in, num(r_out), radial_capacity(d, p, r_in, r_out)});
  });
  ctx.write(t);
}

void run_cell(Context& ctx) {
  const json& c = ctx.cfg.at("cell");
  const auto spec = cell_spec_from(ctx.cfg, c.at("regime").get<std::string>(), c.at("ell").get<double>(),
                                   vector_from_json(c.at("z"), "cell.z"));
  spec.validate();
  std::vector<std::pair<CellProblemSpec, double>> points;
  for (double N : spec.N_list) points.emplace_back(spec, N);
  std::vector<std::string> sources;
  json info;
  const auto solves = ctx.timed("solve_cell", info, [&] { return cached_solves(ctx, points, sources); });
  ctx.operations.back()["cache"] = sources;

  Table rows{"cell",
             {"N", "phi", "nodes", "iterations", "converged", "grad_norm", "regularization_gap",
              "trace_mean_dev", "trace_max_dev"},
             {}};
  std::vector<double> Ns, phis;
  bool converged = true;
  for (const auto& s : solves) {
    rows.rows.push_back({s.N, s.phi, s.nodes, s.diagnostics.total_iterations, s.diagnostics.converged,
                         s.diagnostics.grad_norm, s.diagnostics.regularization_gap, s.trace_mean_dev,
                         s.trace_max_dev});
    Ns.push_back(s.N);
    phis.push_back(s.phi);
    converged = converged && s.diagnostics.converged;
  }
  ctx.write(rows);

  Table summary{"cell_summary",
                {"regime", "ell", "z", "d", "p", "phi", "extrapolated", "rate", "amplitude", "residual",
                 "free_rate", "free_limit", "free_residual", "converged", "envelope_surrogate"},
                {}};
  Extrapolation fit;
  const bool extrapolated = Ns.size() >= 3;
  if (extrapolated) fit = extrapolate(Ns, phis, tail_rate(spec), spec.p);
  summary.rows.push_back({to_string(spec.regime), num(spec.regime == Regime::finite ? spec.ell : 0.0),
                          vector_text(spec.z), spec.d, spec.p,
                          extrapolated ? fit.limit() : phis.back(), extrapolated, fit.fixed.rate,
                          fit.fixed.amplitude, fit.fixed.residual, fit.free.rate, fit.free.limit,
                          fit.free.residual, converged, cell_density(spec).envelope_surrogate});
  ctx.write(summary);

  const json& scan = c.at("scan");
  std::mt19937_64 rng(ctx.cfg.at("seed").get<std::uint64_t>());
  const int m = static_cast<int>(spec.z.size());
  if (const int k = scan.at("upper_bound").get<int>(); k > 0) {
    const auto zs = sample_jumps(rng, m, k);
    json op;
    const auto rep = ctx.timed("scan_upper_bound", op, [&] { return scan_upper_bound(spec, zs); });
    ctx.operations.back()["empirical_c"] = rep.empirical_c;
    ctx.operations.back()["pass"] = rep.pass;
    Table t{"cell_upper_bound", {"z", "phi", "phi_fine", "bound", "ratio", "margin", "pass"}, {}};
    for (const auto& e : rep.entries)
      t.rows.push_back({vector_text(e.z), e.phi, e.phi_fine, e.bound, e.ratio, e.margin, e.pass});
    ctx.write(t);
  }
  if (const int k = scan.at("lipschitz").get<int>(); k > 0) {
    const auto a = sample_jumps(rng, m, k), b = sample_jumps(rng, m, k);
    std::vector<std::pair<Vector, Vector>> pairs;
    for (int i = 0; i < k; ++i) pairs.emplace_back(a[i], b[i]);
    json op;
    const auto rep = ctx.timed("scan_lipschitz", op, [&] { return scan_lipschitz(spec, pairs); });
    ctx.operations.back()["worst"] = rep.worst;
    ctx.operations.back()["stability"] = rep.stability;
    ctx.operations.back()["stable"] = rep.stable;
    Table t{"cell_lipschitz", {"z", "w", "ratio", "ratio_fine"}, {}};
    for (const auto& e : rep.pairs) t.rows.push_back({vector_text(e.z), vector_text(e.w), e.ratio, e.ratio_fine});
    ctx.write(t);
  }
  if (const auto ells = doubles(scan.at("ells"), "cell.scan.ells"); !ells.empty()) {
    json op;
    const auto rep = ctx.timed("scan_ell_continuity", op, [&] {
      return scan_ell_continuity(spec, ells, scan.at("ell_N").get<double>());
    });
    ctx.operations.back()["pass"] = rep.pass;
    ctx.operations.back()["phi_zero"] = rep.phi_zero;
    Table t{"cell_ell", {"ell", "phi", "gap", "phi_over_ell"}, {}};
    for (const auto& r : rep.rows) t.rows.push_back({num(r.ell), r.phi, r.gap, num(r.phi_over_ell)});
    ctx.write(t);
  }
}

void run_sweep(Context& ctx) {
  const json& c = ctx.cfg.at("sweep");
  const std::string regime = c.at("regime").get<std::string>();
  auto ells = doubles(c.at("ell"), "sweep.ell");
  if (regime != "finite" || ells.empty()) ells = {0.0};
  std::vector<std::pair<CellProblemSpec, double>> points;
  for (double ell : ells)
    for (std::size_t k = 0; k < c.at("z").size(); ++k) {
      auto spec = cell_spec_from(ctx.cfg, regime, ell == 0.0 ? 1.0 : ell,
                                 vector_from_json(c.at("z")[k], "sweep.z"));
      spec.validate();
      for (double N : doubles(c.at("N"), "sweep.N")) points.emplace_back(spec, N);
    }
  std::vector<std::string> sources;
  json info;
  const auto solves = ctx.timed("sweep", info, [&] { return cached_solves(ctx, points, sources); });
  ctx.operations.back()["cache"] = sources;
  Table t{"sweep", {"regime", "ell", "z", "N", "phi", "nodes", "iterations", "converged"}, {}};
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& [spec, N] = points[i];
    const auto& s = solves[i];
    t.rows.push_back({regime, spec.regime == Regime::finite ? spec.ell : 0.0, vector_text(spec.z), N, s.phi,
                      s.nodes, s.diagnostics.total_iterations, s.diagnostics.converged});
  }
  ctx.write(t);
}

void run_relax(Context& ctx) {
  const json& c = ctx.cfg.at("relax");
  const auto W = density_from_json(ctx.cfg.at("density"));
  const int depth = c.at("depth").get<int>();
  const auto r_schedule = doubles(c.at("r_schedule"), "relax.r_schedule");
  const auto env = EnvelopeApprox::of(W, depth);
  const auto reduced = W.reduced();
  Table t{"relax", {"index", "F", "W", "envelope", "wbar", "g_limit", "g_residual"}, {}};
  json info;
  ctx.timed("relax", info, [&] {
    for (std::size_t k = 0; k < c.at("F").size(); ++k) {
      const Matrix F = matrix_from_json(c.at("F")[k], "relax.F");
      if (F.rows() != W.rows() || F.cols() != W.cols())
        throw invalid("relax.F entries must be " + shape_string(W.rows(), W.cols()));
      const Matrix Fbar = F.leftCols(W.cols() - 1);
      const double wbar = reduced ? eval(*reduced, Fbar) : reduce_wbar({W, ReductionMode::wbar, {}}, Fbar);
      const auto g = g_limit(W, F, r_schedule, depth);
      t.rows.push_back({static_cast<int>(k), matrix_text(F), eval(W, F), laminate_envelope(env, F), wbar,
                        g.value, g.residual});
    }
  });
  ctx.write(t);
}

RegimeSequences sequences_from(const json& cfg) {
  RegimeSequences s;
  const json& r = cfg.at("regime");
  s.eps = sequence_from_json(r.at("eps"), "regime.eps");
  s.delta = sequence_from_json(r.at("delta"), "regime.delta");
  s.r = sequence_from_json(r.at("r"), "regime.r");
  s.n = cfg.at("geometry").at("d").get<int>() + 1;
  s.p = density_from_json(cfg.at("density")).p();
  return s;
}

void run_regime(Context& ctx) {
  json info;
  const auto rep = ctx.timed("classify", info, [&] { return classify(sequences_from(ctx.cfg)); });
  Table t{"regime", {"label", "ell", "R_ell", "R_zero", "R", "consistency", "symbolic"}, {}};
  t.rows.push_back({to_string(rep.label), num(rep.ell), num(rep.R_ell), num(rep.R_zero), num(rep.R()),
                    rep.consistency, rep.symbolic});
  ctx.write(t);
}

FilmSpec film_spec_from(const json& c) {
  FilmSpec s;
  s.omega = rectangle_from_json(c.at("omega"), "film.omega");
  s.eps = c.at("eps").get<double>();
  s.delta = c.at("delta").get<double>();
  s.r = c.at("r").get<double>();
  s.hole_divisions = c.at("hole_divisions").get<int>();
  s.hole_core = c.at("hole_core").get<double>();
  s.growth = c.at("growth").get<double>();
  s.h_max = c.at("h_max").get<double>();
  s.layers = c.at("layers").get<int>();
  s.voxel_budget = c.at("voxel_budget").get<double>();
  s.validate();
  return s;
}

void run_film(Context& ctx) {
  const json& c = ctx.cfg.at("film");
  const auto W = density_from_json(ctx.cfg.at("density"));
  const auto spec = film_spec_from(c);
  const Matrix F = matrix_from_json(c.at("F"), "film.F");
  const Vector cp = vector_from_json(c.at("c_plus"), "film.c_plus");
  const Vector cm = vector_from_json(c.at("c_minus"), "film.c_minus");
  if (F.rows() != W.rows() || F.cols() != 2 || cp.size() != W.rows() || cm.size() != W.rows())
    throw invalid("film.F must be m x 2 and film.c_plus, film.c_minus of length m");
  json info;
  double energy = 0.0;
  FilmGrid grid;
  ctx.timed("direct_film_energy", info, [&] {
    grid = build_film_grid(spec);
    auto affine = [&](const Vector& shift) {
      return [&F, shift](double x, double y, double) -> Vector { return F * Eigen::Vector2d(x, y) + shift; };
    };
    const auto field = make_film_field(grid, W.rows(), affine(cp), affine(cm));
    energy = direct_film_energy(spec, grid, W, field);
  });
  Matrix full = Matrix::Zero(W.rows(), 3);
  full.leftCols(2) = F;
  const double closed = (cp - cm).norm() == 0.0 ? 2.0 * spec.omega.area() * eval(W, full) : std::nan("");
  Table t{"film", {"nx", "ny", "voxels", "holes", "energy", "affine_closed_form"}, {}};
  t.rows.push_back({grid.nx1() - 1, grid.ny1() - 1, static_cast<long long>(grid.voxels()),
                    static_cast<long long>(grid.cx.size() * grid.cy.size()), energy, num(closed)});
  ctx.write(t);
}

void run_trend(Context& ctx) {
  const json& c = ctx.cfg.at("trend");
  const json& g = ctx.cfg.at("geometry");
  const auto W = density_from_json(ctx.cfg.at("density"));
  TrendOptions o;
  o.omega = rectangle_from_json(c.at("omega"), "trend.omega");
  o.j0 = c.at("j0").get<int>();
  o.j1 = c.at("j1").get<int>();
  o.film.hole_divisions = c.at("hole_divisions").get<int>();
  o.film.hole_core = c.at("hole_core").get<double>();
  o.film.growth = c.at("growth").get<double>();
  o.film.layers = c.at("layers").get<int>();
  o.film.voxel_budget = c.at("voxel_budget").get<double>();
  o.cell_N_cap = c.at("cell_N_cap").get<double>();
  o.cell_resolution = g.at("resolution").get<double>();
  o.cell_grading = g.at("grading").get<double>();
  o.cell_min_size_factor = g.at("min_size_factor").get<double>();
  o.phi_N_list = doubles(g.at("N_list"), "geometry.N_list");
  o.solver = solver_from(ctx.cfg);
  const Vector up = vector_from_json(c.at("u_plus"), "trend.u_plus");
  const Vector um = vector_from_json(c.at("u_minus"), "trend.u_minus");
  json info;
  const auto rep = ctx.timed("gamma_trend", info, [&] {
    return gamma_trend(sequences_from(ctx.cfg), up, um, W, o);
  });
  for (const auto& w : rep.warnings) ctx.warn(w);
  Table t{"trend",
          {"j", "eps", "delta", "r", "N", "N_cell", "ell", "voxels", "growth", "holes", "film_energy", "limit",
           "gap", "cell_phi", "cell_converged"},
          {}};
  for (const auto& r : rep.rows) {
    t.rows.push_back({r.j, r.eps, r.delta, r.r, r.N, r.N_cell, r.ell, static_cast<long long>(r.voxels),
                      r.growth, r.holes, r.film_energy, r.limit, r.gap, r.cell_phi, r.cell_converged});
    if (!r.cell_converged) ctx.flagged = true;
  }
  ctx.write(t);
  Table s{"trend_summary", {"label", "R", "phi", "rows", "monotone", "pass"}, {}};
  s.rows.push_back({to_string(rep.regime.label), num(rep.regime.R()), rep.phi,
                    static_cast<int>(rep.rows.size()), rep.monotone, rep.pass});
  ctx.write(s);
}

void run_poincare(Context& ctx) {
  const json& c = ctx.cfg.at("poincare");
  json info;
  const auto shape = poincare_shape_from_string(c.at("shape").get<std::string>());
  const double p = c.at("p").get<double>();
  const auto rep = ctx.timed("poincare_check", info, [&] {
    return poincare_check(shape, p, doubles(c.at("rho"), "poincare.rho"),
                          doubles(c.at("delta"), "poincare.delta"), standard_poincare_profiles(),
                          c.at("cells").get<int>());
  });
  Table t{"poincare", {"profile", "rho", "delta", "lhs", "rhs", "ratio"}, {}};
  for (const auto& r : rep.rows) t.rows.push_back({r.profile, r.rho, r.delta, r.lhs, r.rhs, r.ratio});
  ctx.write(t);
  Table s{"poincare_summary", {"shape", "p", "max_ratio", "variation", "pass"}, {}};
  s.rows.push_back({to_string(shape), p, rep.max_ratio, rep.variation, rep.pass});
  ctx.write(s);
}

int exit_code_for(ErrorKind kind) {
  return kind == ErrorKind::numerical || kind == ErrorKind::convergence ? 3 : 2;
}

}  // namespace

// ---------------------------------------------------------------- public

EnergyDensity density_from_json(const json& b) {
  const std::string kind = b.at("kind").get<std::string>();
  std::optional<EnergyDensity> W;
  if (kind == "power") {
    W = EnergyDensity::power(b.at("m").get<int>(), b.at("n").get<int>(), b.at("p").get<double>(),
                             b.at("coef").get<double>());
  } else if (kind == "anisotropic") {
    W = EnergyDensity::anisotropic(matrix_from_json(b.at("matrix"), "density.matrix"), b.at("n").get<int>(),
                                   b.at("p").get<double>());
  } else if (kind == "double_well") {
    W = EnergyDensity::double_well(matrix_from_json(b.at("matrix"), "density.matrix"), b.at("p").get<double>());
  } else if (kind == "power_term") {
    W = EnergyDensity::power_term(b.at("m").get<int>(), b.at("n").get<int>(), b.at("q").get<double>(),
                                  b.at("p").get<double>(), b.at("coef").get<double>());
  } else if (kind == "sum") {
    std::vector<EnergyDensity> parts;
    for (const auto& part : b.at("parts")) parts.push_back(density_from_json(part));
    W = EnergyDensity::sum(parts);
  } else {
    throw invalid("unknown density kind '" + kind + "'");
  }
  if (const double beta = b.value("beta", 0.0); beta > 0) W = W->with_beta(beta);
  return *W;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw invalid("config must be a table");
  if (!j.contains("command") || !j.at("command").is_string()) throw invalid("config needs a 'command'");
  const std::string command = j.at("command").get<std::string>();
  const auto it = command_blocks().find(command);
  if (it == command_blocks().end()) throw invalid("unknown command '" + command + "'");
  const auto& blocks = it->second;
  for (const auto& [key, value] : j.items()) {
    if (key == "command" || key == "seed" || key == "output") continue;
    if (std::find(blocks.begin(), blocks.end(), key) == blocks.end())
      throw invalid("unknown key '" + key + "' for command '" + command + "'");
  }
  auto uses = [&](const char* b) { return std::find(blocks.begin(), blocks.end(), b) != blocks.end(); };
  const bool thin = command == "film" || command == "trend" || command == "regime";

  json out;
  out["command"] = command;
  if (j.contains("seed") && !j.at("seed").is_number_unsigned()) throw invalid("'seed' must be a non-negative integer");
  out["seed"] = j.value("seed", std::uint64_t{1});
  out["output"] = merge_block(block_or_empty(j, "output"),
                              {{"directory", "out"}, {"formats", json::array({"csv"})}, {"cache_dir", ""}},
                              "output");
  for (const auto& f : out["output"]["formats"])
    if (f != "csv" && f != "json") throw invalid("output.formats entries must be \"csv\" or \"json\"");

  if (uses("geometry")) {
    const json g = block_or_empty(j, "geometry");
    const int d = g.value("d", thin ? 2 : 3);
    out["geometry"] = merge_block(g,
                                  {{"d", d},
                                   {"N_list", json::array({4.0, 8.0, 16.0})},
                                   {"resolution", 0.25},
                                   {"grading", 1.15},
                                   {"min_size_factor", 1.0 / 32.0},
                                   {"mode", "axisymmetric"}},
                                  "geometry");
    for (double N : doubles(out["geometry"]["N_list"], "geometry.N_list"))
      if (!(N > 1)) throw invalid("truncation radii must satisfy N > 1");
    mesh_mode_from_string(out["geometry"]["mode"].get<std::string>());
  }
  const int d = uses("geometry") ? out["geometry"]["d"].get<int>() : 2;
  const int n = command == "film" ? 3 : d + 1;
  if (uses("density"))
    out["density"] = normalize_density(block_or_empty(j, "density"), n, n >= 4 ? 2.0 : 1.5, "density", true);
  if (uses("solver")) {
    const SolveOptions s;
    out["solver"] = merge_block(block_or_empty(j, "solver"),
                                {{"grad_tol", s.grad_tol},
                                 {"max_iters", s.max_iters},
                                 {"stage_tol", s.stage_tol},
                                 {"memory", s.memory},
                                 {"refresh_interval", s.refresh_interval}},
                                "solver");
  }
  if (uses("regime")) {
    const json r = merge_block(block_or_empty(j, "regime"),
                               {{"eps", {{"base", 2.0}, {"exponent", -1.0}, {"coef", 1.0}}},
                                {"delta", {{"base", 2.0}, {"exponent", -5.0}, {"coef", 1.0}}},
                                {"r", {{"base", 2.0}, {"exponent", -4.0}, {"coef", 1.0}}}},
                               "regime");
    out["regime"] = {{"eps", sequence_json(r["eps"], "regime.eps")},
                     {"delta", sequence_json(r["delta"], "regime.delta")},
                     {"r", sequence_json(r["r"], "regime.r")}};
  }
  if (command == "capacity")
    out["capacity"] = merge_block(block_or_empty(j, "capacity"),
                                  {{"r_in", 1.0}, {"r_out", json::array({2.0, 4.0, 8.0, "inf"})}}, "capacity");
  if (command == "cell") {
    json c = merge_block(block_or_empty(j, "cell"),
                         {{"regime", "infinite"}, {"ell", 1.0}, {"z", json::array({1.0})}, {"scan", json::object()}},
                         "cell");
    c["scan"] = merge_block(c["scan"], {{"upper_bound", 0}, {"lipschitz", 0}, {"ells", json::array()}, {"ell_N", 16.0}},
                            "cell.scan");
    regime_from_string(c["regime"].get<std::string>());
    out["cell"] = c;
  }
  if (command == "sweep") {
    out["sweep"] = merge_block(block_or_empty(j, "sweep"),
                               {{"regime", "infinite"},
                                {"ell", json::array()},
                                {"z", json::array({json::array({1.0})})},
                                {"N", json::array({4.0, 8.0, 16.0})}},
                               "sweep");
    regime_from_string(out["sweep"]["regime"].get<std::string>());
    for (double N : doubles(out["sweep"]["N"], "sweep.N"))
      if (!(N > 1)) throw invalid("truncation radii must satisfy N > 1");
  }
  if (command == "relax")
    out["relax"] = merge_block(block_or_empty(j, "relax"),
                               {{"F", json::array()}, {"depth", 1}, {"r_schedule", json::array({1.0, 1e-1, 1e-2, 1e-3})}},
                               "relax");
  if (command == "film") {
    const FilmSpec f;
    out["film"] = merge_block(block_or_empty(j, "film"),
                              {{"omega", rectangle_json(f.omega)},
                               {"eps", f.eps},
                               {"delta", f.delta},
                               {"r", f.r},
                               {"hole_divisions", f.hole_divisions},
                               {"hole_core", f.hole_core},
                               {"growth", f.growth},
                               {"h_max", f.h_max},
                               {"layers", f.layers},
                               {"voxel_budget", f.voxel_budget},
                               {"F", json::array({json::array({1.0, 0.0})})},
                               {"c_plus", json::array({0.0})},
                               {"c_minus", json::array({0.0})}},
                              "film");
    film_spec_from(out["film"]);
  }
  if (command == "trend") {
    const TrendOptions t;
    out["trend"] = merge_block(block_or_empty(j, "trend"),
                               {{"omega", rectangle_json(t.omega)},
                                {"j0", t.j0},
                                {"j1", t.j1},
                                {"u_plus", json::array({1.0})},
                                {"u_minus", json::array({0.0})},
                                {"hole_divisions", t.film.hole_divisions},
                                {"hole_core", t.film.hole_core},
                                {"growth", t.film.growth},
                                {"layers", t.film.layers},
                                {"voxel_budget", t.film.voxel_budget},
                                {"cell_N_cap", t.cell_N_cap}},
                               "trend");
  }
  if (command == "poincare")
    out["poincare"] = merge_block(block_or_empty(j, "poincare"),
                                  {{"shape", "square"},
                                   {"p", 2.0},
                                   {"rho", json::array({1.0, 1e-1, 1e-2, 1e-3})},
                                   {"delta", json::array({1.0, 1e-1, 1e-2, 1e-3})},
                                   {"cells", 64}},
                                  "poincare");

  // physical constraints
  if (uses("density")) {
    const auto W = density_from_json(out["density"]);
    if (W.cols() != n)
      throw invalid("density has " + std::to_string(W.cols()) + " columns, expected n = " + std::to_string(n));
    if (command != "relax" && command != "film") check_exponent(W.p(), n);
    if (command == "trend") {
      const auto seq = sequences_from(out);
      const auto& t = out["trend"];
      if (t["u_plus"].size() != static_cast<std::size_t>(W.rows()) ||
          t["u_minus"].size() != static_cast<std::size_t>(W.rows()))
        throw invalid("trend.u_plus and trend.u_minus need m components");
      for (int jj = t["j0"].get<int>(); jj <= t["j1"].get<int>(); ++jj)
        if (!(seq.r.at(jj) < seq.eps.at(jj) / 2))
          throw invalid("holes overlap at j = " + std::to_string(jj) + ": need r < eps/2");
    }
  }
  if (command == "trend" && out["geometry"]["d"] != 2) throw invalid("film simulation needs n = 3 (geometry.d = 2)");
  return ExperimentConfig{out};
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw invalid(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) { return cfg.data; }

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t config_hash(const json& j) { return fnv1a(j.dump()); }

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path ResultCache::path_for(const json& key) const { return dir_ / (hex64(config_hash(key)) + ".json"); }

std::optional<CellSolve> ResultCache::lookup(const json& key, std::vector<std::string>& warnings) const {
  const fs::path path = path_for(key);
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    std::ifstream is(path);
    const json entry = json::parse(is);
    if (entry.at("key") != key) {
      warnings.push_back("cache entry " + path.filename().string() + " has a different key; ignored");
      return std::nullopt;
    }
    return solve_from_json(entry.at("solve"));
  } catch (const std::exception&) {
    warnings.push_back("corrupt cache entry " + path.filename().string() + "; recomputed");
    return std::nullopt;
  }
}

void ResultCache::store(const json& key, const CellSolve& solve) const {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  const fs::path path = path_for(key);
  const fs::path tmp = path.string() + ".tmp" + std::to_string(fnv1a(solve_json(solve).dump()));
  {
    std::ofstream os(tmp);
    os << json{{"key", key}, {"solve", solve_json(solve)}}.dump() << '\n';
    if (!os) return;
  }
  fs::rename(tmp, path, ec);
  if (ec) fs::remove(tmp, ec);
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  json data = cfg.data;
  if (opts.seed) data["seed"] = *opts.seed;
  const fs::path out = opts.out_dir.empty() ? fs::path(data["output"]["directory"].get<std::string>()) : opts.out_dir;
  RunOutcome outcome;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    outcome.exit_code = 2;
    outcome.error = "cannot create output directory " + out.string();
    return outcome;
  }
  if (opts.workers) set_worker_count(*opts.workers);

  Context ctx(data, out);
  const auto& formats = data["output"]["formats"];
  ctx.json_out = std::find(formats.begin(), formats.end(), "json") != formats.end();
  if (opts.use_cache) {
    const std::string dir = data["output"]["cache_dir"].get<std::string>();
    ctx.cache.emplace(dir.empty() ? out / "cache" : fs::path(dir));
  }
  const std::string command = data["command"].get<std::string>();
  try {
    if (command == "capacity") run_capacity(ctx);
    else if (command == "cell") run_cell(ctx);
    else if (command == "relax") run_relax(ctx);
    else if (command == "regime") run_regime(ctx);
    else if (command == "film") run_film(ctx);
    else if (command == "trend") run_trend(ctx);
    else if (command == "poincare") run_poincare(ctx);
    else if (command == "sweep") run_sweep(ctx);
    outcome.exit_code = ctx.flagged ? 3 : 0;
    if (ctx.flagged) outcome.error = "solver did not converge; outputs flagged";
  } catch (const Error& e) {
    outcome.exit_code = exit_code_for(e.kind());
    outcome.error = e.what();
  } catch (const std::exception& e) {
    outcome.exit_code = 2;
    outcome.error = e.what();
  }

  if (ctx.json_out && !ctx.results.empty()) {
    const fs::path path = out / (command + ".json");
    std::ofstream os(path);
    os << ctx.results.dump(2) << '\n';
    ctx.files.push_back(path.filename().string());
  }
  json manifest = {{"artifact_version", kArtifactVersion},
                   {"command", command},
                   {"config", data},
                   {"config_hash", hex64(config_hash(data))},
                   {"timestamp", utc_timestamp()},
                   {"operations", ctx.operations},
                   {"files", ctx.files},
                   {"warnings", ctx.warnings},
                   {"flagged", ctx.flagged},
                   {"exit_code", outcome.exit_code},
                   {"error", outcome.error}};
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  outcome.files = ctx.files;
  outcome.files.push_back("manifest.json");
  outcome.warnings = ctx.warnings;
  return outcome;
}

int run(const fs::path& config_path, const RunOptions& opts, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  const auto outcome = run_experiment(cfg, opts);
  for (const auto& w : outcome.warnings) err << "warning: " << w << '\n';
  if (!outcome.error.empty()) err << (outcome.exit_code == 3 ? "non-convergence: " : "error: ") << outcome.error << '\n';
  return outcome.exit_code;
}

}  // namespace sieve
