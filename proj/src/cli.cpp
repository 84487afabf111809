#include "gcq/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "gcq/flag.hpp"
#include "gcq/flow.hpp"
#include "gcq/lab.hpp"
#include "gcq/polytope.hpp"
#include "gcq/rng.hpp"
#include "gcq/toric.hpp"

namespace gcq::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- formatting

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

namespace {

void dump_rec(const json& j, int indent, int depth, std::string& out) {
  auto nl = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        nl(depth + 1);
        out += json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump_rec(it.value(), indent, depth + 1, out);
      }
      nl(depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool flat = std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_primitive(); });
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += flat ? ", " : ",";
        if (!flat) nl(depth + 1);
        dump_rec(j[i], indent, depth + 1, out);
      }
      if (!flat) nl(depth);
      out += ']';
      return;
    }
    case json::value_t::number_float: {
      double v = j.get<double>();
      out += std::isfinite(v) ? format_double(v) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_json(const json& j, int indent) {
  std::string s;
  dump_rec(j, indent, 0, s);
  s += '\n';
  return s;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// ------------------------------------------------------------------ config

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

double parse_double(const std::string& key, const std::string& t) {
  try {
    std::size_t pos = 0;
    double v = std::stod(t, &pos);
    if (pos != t.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("bad number for " + key + ": '" + t + "'");
  }
}

long long parse_int(const std::string& key, const std::string& t) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(t, &pos);
    if (pos != t.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("bad integer for " + key + ": '" + t + "'");
  }
}

// Type check of a value coming from a config file.
json coerce(const Key& k, const json& v) {
  auto bad = [&] { return UsageError("config key '" + k.name + "' has the wrong type"); };
  switch (k.type) {
    case KeyType::Int:
      if (!v.is_number_integer()) throw bad();
      return v;
    case KeyType::Double:
      if (!v.is_number()) throw bad();
      return json(v.get<double>());
    case KeyType::String:
      if (!v.is_string()) throw bad();
      return v;
    case KeyType::IntList: {
      if (!v.is_array()) throw bad();
      for (auto& e : v)
        if (!e.is_number_integer()) throw bad();
      return v;
    }
    case KeyType::DoubleList: {
      if (!v.is_array()) throw bad();
      json out = json::array();
      for (auto& e : v) {
        if (!e.is_number()) throw bad();
        out.push_back(e.get<double>());
      }
      return out;
    }
  }
  throw bad();
}

}  // namespace

json parse_value(const Key& key, const std::string& text) {
  switch (key.type) {
    case KeyType::Int:
      return parse_int(key.name, text);
    case KeyType::Double:
      return parse_double(key.name, text);
    case KeyType::String:
      return text;
    case KeyType::IntList: {
      json a = json::array();
      for (auto& p : split(text, ',')) a.push_back(parse_int(key.name, p));
      return a;
    }
    case KeyType::DoubleList: {
      json a = json::array();
      for (auto& p : split(text, ',')) a.push_back(parse_double(key.name, p));
      return a;
    }
  }
  throw UsageError("unknown key type");
}

json merge_config(const std::vector<Key>& schema, const json& file,
                  const std::vector<std::pair<std::string, std::string>>& flags, const char* env_seed) {
  json cfg = json::object();
  std::map<std::string, const Key*> by_name;
  for (const Key& k : schema) {
    cfg[k.name] = k.fallback;
    by_name[k.name] = &k;
  }
  if (!file.is_null()) {
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    for (auto it = file.begin(); it != file.end(); ++it) {
      auto f = by_name.find(it.key());
      if (f == by_name.end()) throw UsageError("unknown config key '" + it.key() + "'");
      cfg[it.key()] = coerce(*f->second, it.value());
    }
  }
  if (env_seed && *env_seed && by_name.count("seed")) cfg["seed"] = parse_int("GCQ_SEED", env_seed);
  for (const auto& [name, text] : flags) {
    auto f = by_name.find(name);
    if (f == by_name.end()) throw UsageError("unknown option '" + name + "'");
    cfg[name] = parse_value(*f->second, text);
  }
  return cfg;
}

// ---------------------------------------------------------------- commands

namespace {

struct Run {
  std::string command;
  json cfg;
  fs::path out_dir;
  int jobs = 1;
  std::ostream* out = nullptr;
  json artifacts = json::array();
  json invariants = json::object();
  std::vector<std::string> failed;

  void write(const std::string& name, const std::string& content) {
    fs::path p = out_dir / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << content;
    artifacts.push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
  }
  void check(const std::string& name, bool ok) {
    invariants[name] = ok;
    if (!ok) failed.push_back(name);
  }
};

struct Command {
  std::string group, name, help;
  std::vector<Key> schema;
  std::function<void(Run&)> body;
};

IVec ivec(const json& j) { return j.get<IVec>(); }
std::vector<double> dvec(const json& j) { return j.get<std::vector<double>>(); }

std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + '\n';
}

std::string fd(double v) { return format_double(v); }

void require_positive_a(const IVec& a) {
  if (a.empty()) throw std::invalid_argument("a must not be empty");
  for (long long v : a)
    if (v < 1) throw std::invalid_argument("a must be positive");
}

json polytope_json(const DelzantPolytope& P) {
  json facets = json::array();
  for (const auto& f : P.facets()) facets.push_back({{"normal", f.normal}, {"offset", f.offset}});
  return {{"d", P.dim()}, {"labels", P.labels()}, {"facets", facets}, {"delzant_note", P.delzant_note()}};
}

std::string lattice_csv(const DelzantPolytope& P, const std::vector<IVec>& pts) {
  std::vector<std::string> head;
  for (int k = 0; k < P.dim(); ++k) head.push_back(k < static_cast<int>(P.labels().size()) ? P.labels()[k] : "x" + std::to_string(k));
  std::string s = csv_row(head);
  for (const auto& p : pts) {
    std::vector<std::string> row;
    for (long long v : p) row.push_back(std::to_string(v));
    s += csv_row(row);
  }
  return s;
}

// --------------------------------------------------------------- polytope

std::vector<Key> polytope_keys() {
  return {{"n", KeyType::Int, 3, "flag size"}, {"a", KeyType::IntList, json::array({1, 1}), "weights a_1..a_{n-1}"}};
}

DelzantPolytope gc_from(const Run& r, IVec& a) {
  int n = r.cfg["n"].get<int>();
  a = ivec(r.cfg["a"]);
  require_positive_a(a);
  if (n < 2 || static_cast<int>(a.size()) != n - 1) throw std::invalid_argument("a must have n - 1 entries");
  return gc_polytope(n, a);
}

void cmd_polytope_gen(Run& r) {
  IVec a;
  DelzantPolytope P = gc_from(r, a);
  auto pts = lattice_points(P);
  long long w = weyl_dim(weight_from_a(a));
  json j = polytope_json(P);
  j["n"] = r.cfg["n"];
  j["a"] = a;
  j["lambda"] = weight_from_a(a);
  j["lattice"] = pts;
  j["lattice_count"] = pts.size();
  j["weyl_dim"] = w;
  r.write("polytope.json", dump_json(j));
  r.write("lattice.csv", lattice_csv(P, pts));
  r.check("lattice_equals_weyl", static_cast<long long>(pts.size()) == w);
  *r.out << "d=" << P.dim() << " lattice=" << pts.size() << " weyl=" << w << "\n";
}

void cmd_polytope_count(Run& r) {
  IVec a;
  DelzantPolytope P = gc_from(r, a);
  std::size_t count = lattice_points(P).size();
  long long w = weyl_dim(weight_from_a(a));
  bool match = static_cast<long long>(count) == w;
  r.write("count.json", dump_json({{"lattice", count}, {"weyl", w}, {"match", match}}));
  r.check("lattice_equals_weyl", match);
  *r.out << "lattice=" << count << " weyl=" << w << " match=" << (match ? "true" : "false") << "\n";
}

void cmd_polytope_lattice(Run& r) {
  IVec a;
  DelzantPolytope P = gc_from(r, a);
  auto pts = lattice_points(P);
  r.write("lattice.csv", lattice_csv(P, pts));
  *r.out << "lattice=" << pts.size() << "\n";
}

// ------------------------------------------------------------------ toric

// "0..3" or "0..3x0..2".
DelzantPolytope parse_delta(const std::string& s) {
  std::vector<DelzantPolytope> parts;
  for (const auto& piece : split(s, 'x')) {
    auto dots = piece.find("..");
    if (dots == std::string::npos) throw UsageError("delta must look like 0..3 or 0..3x0..2");
    long long lo = parse_int("delta", piece.substr(0, dots)), hi = parse_int("delta", piece.substr(dots + 2));
    if (hi <= lo) throw UsageError("empty interval in delta");
    parts.push_back(interval(lo, hi));
  }
  if (parts.empty()) throw UsageError("empty delta");
  return parts.size() == 1 ? parts[0] : product_polytope(parts);
}

std::vector<Key> toric_keys() {
  return {{"delta", KeyType::String, "0..3", "product of intervals, e.g. 0..3x0..3"},
          {"m", KeyType::IntList, json::array({1}), "lattice point"},
          {"s", KeyType::DoubleList, json::array({10.0, 20.0, 40.0}), "deformation parameters"},
          {"eps", KeyType::Double, 0.3, "exclusion radius"},
          {"nu_scale", KeyType::Double, 1.0, "nu(x) = nu_scale |x|^2 / 2"},
          {"cells", KeyType::Int, 32, "coarse cells per coordinate"},
          {"rel_tolerance", KeyType::Double, 1e-6, "total-mass tolerance"},
          {"outside_tolerance", KeyType::Double, 1e-4, "outside-mass tolerance"},
          {"profile_points", KeyType::Int, 0, "density profile samples (1-D only)"}};
}

void cmd_toric_concentrate(Run& r) {
  DelzantPolytope P = parse_delta(r.cfg["delta"].get<std::string>());
  IVec m = ivec(r.cfg["m"]);
  auto ss = dvec(r.cfg["s"]);
  for (std::size_t i = 1; i < ss.size(); ++i)
    if (!(ss[i] > ss[i - 1])) throw UsageError("s must be increasing");
  const int d = P.dim();
  if (static_cast<int>(m.size()) != d) throw UsageError("m has the wrong dimension");
  double scale = r.cfg["nu_scale"].get<double>();
  if (!(scale > 0)) throw UsageError("nu_scale must be positive");
  SymplecticPotential g(P, 0.0, ConvexDeformation::quadratic(Eigen::MatrixXi::Identity(d, d), scale * Mat::Identity(d, d)));
  ConcentrationOptions opt;
  opt.eps = r.cfg["eps"].get<double>();
  opt.grid.cells = r.cfg["cells"].get<int>();
  opt.rel_tolerance = r.cfg["rel_tolerance"].get<double>();
  opt.outside_tolerance = r.cfg["outside_tolerance"].get<double>();
  std::vector<TestFunction> phis{{"one", [](const Vec&) { return 1.0; }}};
  for (int k = 0; k < d; ++k) phis.push_back({"x" + std::to_string(k), [k](const Vec& x) { return x(k); }});

  std::vector<std::string> head{"s", "outside_mass", "log_outside_mass", "sup_outside", "log_sup_outside", "log_bound",
                                "fitted_r", "pairing_one"};
  for (int k = 0; k < d; ++k) head.push_back("pairing_x" + std::to_string(k));
  head.push_back("nodes");
  head.push_back("rel_error");
  std::string csv = csv_row(head);
  std::vector<double> fit_s, fit_l;
  bool norm_ok = true, bound_ok = true, mono_ok = true;
  double prev = 2.0;
  for (double s : ss) {
    auto c = toric_concentration(g.with_s(s), m, opt, phis);
    std::vector<std::string> row{fd(s), fd(c.outside_mass), fd(c.log_outside_mass), fd(c.sup_outside), fd(c.log_sup_outside),
                                 fd(c.log_bound), fd(c.fitted_r)};
    for (double p : c.pairings) row.push_back(fd(p));
    row.push_back(std::to_string(c.nodes));
    row.push_back(fd(c.rel_error));
    csv += csv_row(row);
    norm_ok = norm_ok && std::abs(c.pairings[0] - 1.0) <= 1e-6;
    bound_ok = bound_ok && c.log_sup_outside <= c.log_bound;
    mono_ok = mono_ok && c.outside_mass <= prev;
    prev = c.outside_mass;
    if (s > 0) {
      fit_s.push_back(s);
      fit_l.push_back(c.log_outside_mass);
    }
  }
  r.write("concentration.csv", csv);
  const double target = -2.0 * kPi * g.deformer().growth_lower() * opt.eps * opt.eps;
  json summary{{"target_slope", target}};
  if (fit_s.size() >= 2) {
    auto f = fit_line(fit_s, fit_l);
    summary["slope"] = f.slope;
    summary["intercept"] = f.intercept;
    summary["r2"] = f.r2;
    *r.out << "slope=" << fd(f.slope) << " target=" << fd(target) << "\n";
  }
  r.check("normalization", norm_ok);
  r.check("sup_below_bound", bound_ok);
  r.check("outside_mass_nonincreasing", mono_ok);
  summary["invariants"] = r.invariants;
  summary["config"] = r.cfg;
  r.write("summary.json", dump_json(summary));

  int np = r.cfg["profile_points"].get<int>();
  if (np > 0) {
    if (d != 1) throw UsageError("profile_points needs a one-dimensional delta");
    auto verts = P.vertices();
    double lo = std::min(verts[0](0), verts[1](0)), hi = std::max(verts[0](0), verts[1](0));
    std::string dat = "# x";
    for (double s : ss) dat += " s=" + fd(s);
    dat += '\n';
    std::vector<double> norms;
    for (double s : ss) norms.push_back(toric_concentration(g.with_s(s), m, opt).log_norm);
    Vec mv(1);
    mv << static_cast<double>(m[0]);
    for (int i = 0; i < np; ++i) {
      Vec x(1);
      x << lo + (hi - lo) * (i + 0.5) / np;
      dat += fd(x(0));
      for (std::size_t k = 0; k < ss.size(); ++k)
        dat += ' ' + fd(std::exp(section_log_density(g.with_s(ss[k]), mv, x) - norms[k]));
      dat += '\n';
    }
    r.write("profile.dat", dat);
  }
}

// ------------------------------------------------------------------- flag

std::vector<Key> flag_keys() {
  return {{"n", KeyType::Int, 3, "flag size"},
          {"a", KeyType::IntList, json::array({1, 1}), "weights"},
          {"samples", KeyType::Int, 100, "random flags"},
          {"seed", KeyType::Int, 1, "seed"}};
}

void cmd_flag_sample(Run& r) {
  int n = r.cfg["n"].get<int>();
  IVec a = ivec(r.cfg["a"]);
  require_positive_a(a);
  if (n < 2 || static_cast<int>(a.size()) != n - 1) throw std::invalid_argument("a must have n - 1 entries");
  const int samples = r.cfg["samples"].get<int>();
  const auto seed = r.cfg["seed"].get<std::uint64_t>();
  DelzantPolytope P = gc_polytope(n, a);
  IVec lam = weight_from_a(a);
  std::vector<std::string> head{"sample"};
  for (int l = 1; l < n; ++l)
    for (int j = 1; j <= l; ++j) head.push_back(gc_label(l, j));
  head.push_back("spectrum_error");
  head.push_back("interlacing_violation");
  std::string csv = csv_row(head);
  double worst_spec = 0, worst_inter = 0;
  bool inside = true;
  for (int s = 0; s < samples; ++s) {
    CMat V = random_flag(split_seed(seed, static_cast<std::uint64_t>(s)), n);
    GCValue g = gc_map(V, a);
    double spec = 0, inter = 0;
    for (int i = 0; i < n; ++i) spec = std::max(spec, std::abs(g.rows[n - 1][i] - static_cast<double>(lam[i])));
    for (int l = 1; l < n; ++l)
      for (int j = 0; j < l; ++j)
        inter = std::max({inter, g.rows[l - 1][j] - g.rows[l][j], g.rows[l][j + 1] - g.rows[l - 1][j]});
    Vec c = g.coordinates();
    inside = inside && P.contains(c, false, 1e-10);
    worst_spec = std::max(worst_spec, spec);
    worst_inter = std::max(worst_inter, inter);
    std::vector<std::string> row{std::to_string(s)};
    for (Eigen::Index k = 0; k < c.size(); ++k) row.push_back(fd(c(k)));
    row.push_back(fd(spec));
    row.push_back(fd(inter));
    csv += csv_row(row);
  }
  r.write("gc.csv", csv);
  r.check("spectrum", worst_spec <= 1e-10);
  r.check("interlacing", worst_inter <= 1e-10);
  r.check("inside_gc_polytope", inside);
  r.write("summary.json", dump_json({{"max_spectrum_error", worst_spec},
                                     {"max_interlacing_violation", worst_inter},
                                     {"invariants", r.invariants},
                                     {"config", r.cfg}}));
  *r.out << "samples=" << samples << " max_spectrum_error=" << fd(worst_spec) << "\n";
}

// ------------------------------------------------------------------- flow

std::vector<Key> flow_keys() {
  return {{"a", KeyType::IntList, json::array({1, 1}), "weights"},
          {"t1", KeyType::Double, 1.0, "start fiber"},
          {"t0", KeyType::Double, 0.5, "end fiber"},
          {"h", KeyType::Double, 1e-3, "step"},
          {"seed", KeyType::Int, 1, "seed of the start flag"}};
}

void cmd_flow_run(Run& r) {
  IVec a = ivec(r.cfg["a"]);
  require_positive_a(a);
  if (a.size() != 2) throw std::invalid_argument("the flow is implemented for n = 3");
  const double t1 = r.cfg["t1"].get<double>(), t0 = r.cfg["t0"].get<double>(), h = r.cfg["h"].get<double>();
  if (!(h > 0)) throw UsageError("h must be positive");
  Family3 fam(a);
  CMat V = random_flag(r.cfg["seed"].get<std::uint64_t>(), 3);
  FamilyPoint x = fam.from_flag(V, t1);
  FlowResult res = fam.flow(x, t1 - t0, h, true);
  std::string csv = csv_row({"step", "t_re", "t_im", "residual", "f_deviation", "z_re_f", "z_im_f"});
  for (const auto& s : res.log)
    csv += csv_row({std::to_string(s.step), fd(s.t.real()), fd(s.t.imag()), fd(s.residual), fd(s.f_deviation),
                    fd(s.z_re_f), fd(s.z_im_f)});
  r.write("trajectory.csv", csv);
  r.check("f_deviation", res.max_f_deviation < 1e-6);
  r.check("on_family", res.max_residual <= 1e-12);
  r.check("z_re_f", res.max_z_re_dev < 1e-8);
  r.check("z_im_f", res.max_z_im < 1e-8);
  r.write("summary.json", dump_json({{"steps", res.steps},
                                     {"max_f_deviation", res.max_f_deviation},
                                     {"max_residual", res.max_residual},
                                     {"max_z_re_deviation", res.max_z_re_dev},
                                     {"max_z_im", res.max_z_im},
                                     {"invariants", r.invariants},
                                     {"config", r.cfg}}));
  *r.out << "steps=" << res.steps << " f_deviation=" << fd(res.max_f_deviation) << "\n";
}

// -------------------------------------------------------------------- lab

std::vector<Key> combined_keys() {
  CombinedConfig d;
  return {{"a", KeyType::IntList, d.a, "weights"},
          {"m", KeyType::IntList, d.m, "interior GC lattice point"},
          {"s_grid", KeyType::DoubleList, d.s_grid, "increasing s values"},
          {"eps", KeyType::Double, d.eps, "exclusion radius"},
          {"schedule", KeyType::String, "default", "default or adaptive"},
          {"rate", KeyType::Double, 5.0, "t = exp(-s / rate)"},
          {"nu_scale", KeyType::Double, 1.0, "nu(c) = nu_scale |c|^2 / 2"},
          {"cells", KeyType::Int, d.cells, "coarse cells"},
          {"focus_half_width", KeyType::Double, d.focus_half_width, "focus box half-width"},
          {"focus_spacing", KeyType::Double, d.focus_spacing, "largest focus spacing"},
          {"resolution", KeyType::Double, d.resolution, "nodes per concentration length"},
          {"angles", KeyType::Int, d.angles, "angle samples per GC circle"},
          {"h", KeyType::Double, d.h, "flow step"},
          {"seed", KeyType::Int, 1, "seed"}};
}

Schedule make_schedule(const Run& r, const GCEmbedding& E, double s_max, double h) {
  const std::string kind = r.cfg["schedule"].get<std::string>();
  const double rate = r.cfg["rate"].get<double>();
  if (kind == "default") return default_schedule(rate);
  if (kind == "adaptive")
    return adaptive_schedule(s_max, v0_flow_discrepancy(E, 10, r.cfg["seed"].get<std::uint64_t>(), h), 1e-8, rate);
  throw UsageError("schedule must be default or adaptive");
}

void cmd_lab_combined(Run& r) {
  CombinedConfig cfg;
  cfg.a = ivec(r.cfg["a"]);
  require_positive_a(cfg.a);
  cfg.m = ivec(r.cfg["m"]);
  cfg.s_grid = dvec(r.cfg["s_grid"]);
  cfg.eps = r.cfg["eps"].get<double>();
  cfg.nu_matrix = r.cfg["nu_scale"].get<double>() * Mat::Identity(3, 3);
  cfg.cells = r.cfg["cells"].get<int>();
  cfg.focus_half_width = r.cfg["focus_half_width"].get<double>();
  cfg.focus_spacing = r.cfg["focus_spacing"].get<double>();
  cfg.resolution = r.cfg["resolution"].get<double>();
  cfg.angles = r.cfg["angles"].get<int>();
  cfg.h = r.cfg["h"].get<double>();
  cfg.seed = r.cfg["seed"].get<std::uint64_t>();
  cfg.jobs = r.jobs;
  if (cfg.s_grid.empty()) throw UsageError("s_grid must not be empty");
  if (cfg.a.size() != 2) throw std::invalid_argument("the combined experiment is implemented for n = 3");
  GCEmbedding E = gc_embedding(cfg.a);
  cfg.schedule = make_schedule(r, E, cfg.s_grid.back(), cfg.h);
  CombinedReport rep = combined_experiment(cfg);

  std::string csv = csv_row({"s", "t", "outside_mass", "toric_outside_mass", "pairing_one", "pairing_c1", "pairing_c2",
                             "pairing_c3", "failed_flows", "transport_norm_drift", "nodes"});
  bool pair_ok = true, coupling_ok = true, s0_ok = true;
  for (const auto& c : rep.cells) {
    csv += csv_row({fd(c.s), fd(c.t), fd(c.outside_mass), fd(c.toric_outside_mass), fd(c.pairing_one), fd(c.pairing_c[0]),
                    fd(c.pairing_c[1]), fd(c.pairing_c[2]), std::to_string(c.failed_flows), fd(c.transport_norm_drift),
                    std::to_string(c.nodes)});
    pair_ok = pair_ok && std::abs(c.pairing_one - 1.0) <= 1e-3;
    if (c.s > 0) coupling_ok = coupling_ok && c.outside_mass <= 3.0 * c.toric_outside_mass;
    if (c.s == 0) s0_ok = std::abs(c.outside_mass / c.toric_outside_mass - 1.0) < 0.02;
  }
  r.write("combined.csv", csv);
  r.check("pairing_one", pair_ok);
  r.check("coupling_within_3x_toric", coupling_ok);
  r.check("s0_matches_toric_baseline", s0_ok);
  if (rep.cells.size() > 1) r.check("outside_mass_decreasing", rep.strictly_decreasing);
  json summary{{"c_m", rep.c_m},
               {"lift", rep.lift},
               {"adapted_basis", json::array()},
               {"final_outside_mass", rep.cells.back().outside_mass},
               {"invariants", r.invariants},
               {"config", r.cfg}};
  for (Eigen::Index j = 0; j < E.snf.V.cols(); ++j) {
    IVec col(static_cast<std::size_t>(E.snf.V.rows()));
    for (Eigen::Index i = 0; i < E.snf.V.rows(); ++i) col[static_cast<std::size_t>(i)] = E.snf.V(i, j);
    summary["adapted_basis"].push_back(col);
  }
  if (cfg.schedule.kind == Schedule::Kind::Adaptive) {
    summary["knots"] = cfg.schedule.knots;
    summary["knot_met"] = cfg.schedule.knot_met;
  }
  r.write("summary.json", dump_json(summary));
  for (const auto& c : rep.cells)
    *r.out << "s=" << fd(c.s) << " t=" << fd(c.t) << " outside=" << fd(c.outside_mass)
           << " toric=" << fd(c.toric_outside_mass) << "\n";
}

std::vector<Key> moment_keys() {
  return {{"a", KeyType::IntList, json::array({1, 1}), "weights"},
          {"t", KeyType::DoubleList, json::array({0.1, 0.02}), "decreasing end fibers in (0, 0.2]"},
          {"samples", KeyType::Int, 20, "random flags"},
          {"h", KeyType::Double, 1e-2, "flow step"},
          {"seed", KeyType::Int, 1, "seed"}};
}

void cmd_lab_moment(Run& r) {
  IVec a = ivec(r.cfg["a"]);
  require_positive_a(a);
  auto ts = dvec(r.cfg["t"]);
  std::string csv = csv_row({"t", "sample", "discrepancy"});
  json maxes = json::array();
  bool trend = true, ok = true;
  double prev = std::numeric_limits<double>::infinity();
  for (double t : ts) {
    auto mc = gc_vs_torus_moment_check(a, t, r.cfg["samples"].get<int>(), r.cfg["seed"].get<std::uint64_t>(),
                                       r.cfg["h"].get<double>(), r.jobs);
    for (std::size_t k = 0; k < mc.discrepancies.size(); ++k)
      csv += csv_row({fd(t), std::to_string(k), fd(mc.discrepancies[k])});
    maxes.push_back(mc.max_discrepancy);
    trend = trend && mc.max_discrepancy < prev;
    ok = ok && mc.failures == 0;
    prev = mc.max_discrepancy;
    *r.out << "t=" << fd(t) << " max_discrepancy=" << fd(mc.max_discrepancy) << "\n";
  }
  r.write("moment_check.csv", csv);
  r.check("flows_completed", ok);
  r.check("discrepancy_shrinks", trend);
  r.write("summary.json", dump_json({{"max_discrepancy", maxes}, {"invariants", r.invariants}, {"config", r.cfg}}));
}

std::vector<Key> schedule_keys() {
  return {{"schedule", KeyType::String, "default", "default or adaptive"},
          {"rate", KeyType::Double, 5.0, "t = exp(-s / rate)"},
          {"s_max", KeyType::Double, 10.0, "largest s"},
          {"step", KeyType::Double, 0.5, "output spacing in s"},
          {"a", KeyType::IntList, json::array({2, 2}), "weights for the adaptive discrepancy"},
          {"h", KeyType::Double, 1e-2, "flow step"},
          {"seed", KeyType::Int, 1, "seed"}};
}

void cmd_lab_schedule(Run& r) {
  IVec a = ivec(r.cfg["a"]);
  require_positive_a(a);
  const double s_max = r.cfg["s_max"].get<double>(), step = r.cfg["step"].get<double>();
  if (!(step > 0) || s_max < 0) throw UsageError("bad s range");
  GCEmbedding E = gc_embedding(a);
  Schedule S = make_schedule(r, E, s_max, r.cfg["h"].get<double>());
  std::string csv = csv_row({"s", "t"});
  bool mono = S(0.0) == 1.0;
  double prev = 1.0;
  const int N = static_cast<int>(std::floor(s_max / step + 1e-9));
  for (int i = 0; i <= N; ++i) {
    double s = i * step, t = S(s);
    csv += csv_row({fd(s), fd(t)});
    mono = mono && t <= prev;
    prev = t;
  }
  r.write("schedule.csv", csv);
  r.check("t0_one_and_monotone", mono);
  json summary{{"invariants", r.invariants}, {"config", r.cfg}};
  if (S.kind == Schedule::Kind::Adaptive) {
    summary["knots"] = S.knots;
    summary["knot_met"] = S.knot_met;
  }
  r.write("summary.json", dump_json(summary));
  *r.out << "t(" << fd(s_max) << ")=" << fd(S(s_max)) << "\n";
}

std::vector<Command> commands() {
  return {{"polytope", "gen", "GC polytope JSON and lattice CSV", polytope_keys(), cmd_polytope_gen},
          {"polytope", "count", "lattice points against the Weyl dimension", polytope_keys(), cmd_polytope_count},
          {"polytope", "lattice", "lattice points CSV", polytope_keys(), cmd_polytope_lattice},
          {"toric", "concentrate", "outside mass, sup and pairings over s", toric_keys(), cmd_toric_concentrate},
          {"flag", "sample", "GC values of random flags", flag_keys(), cmd_flag_sample},
          {"flow", "run", "gradient-Hamiltonian trajectory between two fibers", flow_keys(), cmd_flow_run},
          {"lab", "combined", "flow plus deformation experiment", combined_keys(), cmd_lab_combined},
          {"lab", "moment-check", "GC map against the torus moment after flow", moment_keys(), cmd_lab_moment},
          {"lab", "schedule", "t(s) policy table", schedule_keys(), cmd_lab_schedule}};
}

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"gcq: Gelfand-Cetlin quantization experiments"};
  app.set_help_flag("--help", "print help");
  app.require_subcommand(1);
  const auto cmds = commands();
  std::map<std::string, CLI::App*> groups;
  struct Leaf {
    const Command* cmd;
    CLI::App* app;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> opts;
    std::string config, out_dir;
    int jobs = 1;
  };
  std::vector<std::unique_ptr<Leaf>> leaves;
  for (const auto& c : cmds) {
    if (!groups.count(c.group)) {
      groups[c.group] = app.add_subcommand(c.group, c.group + " commands");
      groups[c.group]->require_subcommand(1);
    }
    auto leaf = std::make_unique<Leaf>();
    leaf->cmd = &c;
    leaf->app = groups[c.group]->add_subcommand(c.name, c.help);
    for (const Key& k : c.schema)
      leaf->opts[k.name] = leaf->app->add_option(flag_name(k.name), leaf->values[k.name], k.help);
    leaf->app->add_option("--config", leaf->config, "JSON config file");
    leaf->app->add_option("--out", leaf->out_dir, "output directory");
    leaf->app->add_option("--jobs", leaf->jobs, "worker threads")->check(CLI::PositiveNumber);
    leaves.push_back(std::move(leaf));
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Leaf* leaf = nullptr;
  for (auto& l : leaves)
    if (l->app->parsed()) leaf = l.get();
  if (!leaf) {
    err << "no command given\n";
    return kUsage;
  }

  Run r;
  r.command = leaf->cmd->group + " " + leaf->cmd->name;
  r.out = &out;
  r.jobs = leaf->jobs;
  try {
    json file;
    if (!leaf->config.empty()) {
      std::ifstream f(leaf->config);
      if (!f) throw UsageError("cannot open config file " + leaf->config);
      try {
        f >> file;
      } catch (const json::parse_error& e) {
        throw UsageError(std::string("malformed config JSON: ") + e.what());
      }
    }
    std::vector<std::pair<std::string, std::string>> flags;
    for (const Key& k : leaf->cmd->schema)
      if (leaf->opts[k.name]->count() > 0) flags.emplace_back(k.name, leaf->values[k.name]);
    r.cfg = merge_config(leaf->cmd->schema, file, flags, std::getenv("GCQ_SEED"));
    r.out_dir = leaf->out_dir.empty() ? fs::path("gcq_out") / (leaf->cmd->group + "_" + leaf->cmd->name)
                                      : fs::path(leaf->out_dir);
    fs::create_directories(r.out_dir);

    const std::string started = utc_now();
    leaf->cmd->body(r);
    json manifest{{"tool", "gcq"},
                  {"version", kToolVersion},
                  {"command", r.command},
                  {"config", r.cfg},
                  {"jobs", r.jobs},
                  {"started", started},
                  {"finished", utc_now()},
                  {"invariants", r.invariants},
                  {"artifacts", r.artifacts}};
    if (r.cfg.contains("seed")) manifest["seeds"] = {{"seed", r.cfg["seed"]}};
    std::ofstream mf(r.out_dir / "manifest.json", std::ios::binary);
    mf << dump_json(manifest);
    if (!r.failed.empty()) {
      std::string names;
      for (const auto& n : r.failed) names += (names.empty() ? "" : ", ") + n;
      throw InvariantFailure(names);
    }
    return kOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvariantFailure& e) {
    err << e.what() << "\n";
    return kNumerical;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  }
}

}  // namespace gcq::cli
