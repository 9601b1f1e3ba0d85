// cli.hpp
// Batch front-end: JSON run configuration, run directories with manifests, CSV output.
//
// A run writes <output_dir>/<command>-<YYYYmmdd-HHMMSS>/ with manifest.json (resolved
// config, version, seed, summary or error), result.csv and, for field-producing
// commands, field.txt. Exit codes: 0 success, 2 invalid input, 3 solver failure,
// 4 geometry or range error.

#pragma once

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gammaphase/construct.hpp"
#include "gammaphase/errors.hpp"
#include "gammaphase/experiment.hpp"
#include "gammaphase/field.hpp"
#include "gammaphase/solver.hpp"
#include "gammaphase/tensor.hpp"
#include "gammaphase/wellmodel.hpp"

#ifndef GAMMAPHASE_VERSION
#define GAMMAPHASE_VERSION "1.0.0"
#endif

namespace gammaphase::cli {

using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitGeometry = 4;

enum class Command { Wells, Compat, Profile, Minimize, Cell, Anisotropy, MassSweep, Compactness };

inline const std::map<std::string, Command>& command_names() {
  static const std::map<std::string, Command> names{
      {"wells", Command::Wells},           {"compat", Command::Compat},         {"profile", Command::Profile},
      {"minimize", Command::Minimize},     {"cell", Command::Cell},             {"anisotropy", Command::Anisotropy},
      {"mass-sweep", Command::MassSweep}, {"compactness", Command::Compactness}};
  return names;
}

inline std::string to_string(Command c) {
  for (const auto& [name, cmd] : command_names())
    if (cmd == c) return name;
  return "?";
}

inline std::optional<Command> parse_command(const std::string& s) {
  const auto it = command_names().find(s);
  if (it == command_names().end()) return std::nullopt;
  return it->second;
}

/// Thrown by parse_config with every problem found, one per line.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : ValidationError(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string out;
    for (const auto& s : p) out += (out.empty() ? "" : "\n") + s;
    return out;
  }
  std::vector<std::string> problems_;
};

struct GridSpec {
  int nx = 65, ny = 65;
  double lx = 1.0, ly = 1.0, x0 = 0.0, y0 = 0.0;
  Grid make() const { return Grid::make(nx, ny, lx, ly, x0, y0); }
};

struct LaminateSpec {
  Vec2 normal = Vec2::UnitY();
  std::vector<double> offsets{0.5};
  /// Phase below the first interface: "mu0" or "mu1".
  std::string phase = "mu0";
};

struct RunConfig {
  Command command = Command::Wells;
  ChemParams chem;
  std::optional<Misfit> e0;
  double lambda = 1.0, mu = 1.0;
  std::optional<Mat3> stiffness_matrix;
  std::optional<double> epsilon;
  std::vector<double> eps_list;
  double h_ratio = 8.0;
  std::optional<GridSpec> grid;
  std::optional<LaminateSpec> laminate;
  SolveConfig solve;

  // profile
  std::string profile_mode = "chem-only";
  int profile_samples = 257;
  // minimize
  std::string init = "random";
  // cell and anisotropy
  Vec2 cell_normal = Vec2::UnitY();
  double cell_width = 1.0, cell_height = 1.0;
  Boundary cell_boundary = Boundary::PinnedEnds;
  bool width_check = true, height_check = true;
  std::optional<double> check_eps;
  Vec2 probe_normal = Vec2(1.0, 1.0).normalized();
  std::optional<Vec2> control_normal = Vec2::UnitY();
  // mass-sweep and compactness
  std::vector<double> m_list;
  Rect domain{0.0, 0.0, 1.0, 1.0};

  std::string output_dir = "runs";
  int threads = 1;

  Stiffness stiffness() const {
    return stiffness_matrix ? Stiffness(*stiffness_matrix) : isotropic_stiffness(lambda, mu);
  }
  Material material(double eps) const {
    return Material::make(chem, stiffness(), e0.value_or(Misfit{}), eps);
  }
};

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

/// Walks one JSON object, recording unknown keys and type errors with their paths.
class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  bool has(const std::string& key) const { return obj_.contains(key); }
  std::string path(const std::string& key) const { return join_path(path_, key); }
  const json& at(const std::string& key) const { return obj_.at(key); }

  void allow(std::initializer_list<const char*> keys) const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) errors_.push_back(path(it.key()) + ": unknown key");
    }
  }

  void number(const std::string& key, double& out) const {
    if (!has(key)) return;
    if (auto v = as_number(at(key), path(key))) out = *v;
  }
  void number(const std::string& key, std::optional<double>& out) const {
    if (!has(key)) return;
    if (auto v = as_number(at(key), path(key))) out = *v;
  }
  void integer(const std::string& key, int& out) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_integer()) {
      errors_.push_back(path(key) + ": expected an integer");
      return;
    }
    out = v.get<int>();
  }
  void unsigned64(const std::string& key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      errors_.push_back(path(key) + ": expected a non-negative integer");
      return;
    }
    out = v.get<std::uint64_t>();
  }
  void boolean(const std::string& key, bool& out) const {
    if (!has(key)) return;
    if (!at(key).is_boolean()) {
      errors_.push_back(path(key) + ": expected true or false");
      return;
    }
    out = at(key).get<bool>();
  }
  void string(const std::string& key, std::string& out) const {
    if (!has(key)) return;
    if (!at(key).is_string()) {
      errors_.push_back(path(key) + ": expected a string");
      return;
    }
    out = at(key).get<std::string>();
  }
  std::optional<std::vector<double>> numbers(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const json& v = at(key);
    if (!v.is_array()) {
      errors_.push_back(path(key) + ": expected an array of numbers");
      return std::nullopt;
    }
    std::vector<double> out;
    bool ok = true;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (auto x = as_number(v[k], path(key) + "[" + std::to_string(k) + "]")) {
        out.push_back(*x);
      } else {
        ok = false;
      }
    }
    if (!ok) return std::nullopt;
    return out;
  }
  std::optional<Vec2> vec2(const std::string& key) const {
    auto v = numbers(key);
    if (!v) return std::nullopt;
    if (v->size() != 2) {
      errors_.push_back(path(key) + ": expected 2 numbers");
      return std::nullopt;
    }
    return Vec2((*v)[0], (*v)[1]);
  }
  std::optional<Reader> object(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_object()) {
      errors_.push_back(path(key) + ": expected an object");
      return std::nullopt;
    }
    return Reader(at(key), path(key), errors_);
  }
  void error(const std::string& key, const std::string& msg) const { errors_.push_back(path(key) + ": " + msg); }

 private:
  std::optional<double> as_number(const json& v, const std::string& where) const {
    if (!v.is_number()) {
      errors_.push_back(where + ": expected a number");
      return std::nullopt;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) {
      errors_.push_back(where + ": must be finite");
      return std::nullopt;
    }
    return x;
  }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
};

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t k = 0; k < text.size() && k + 1 < byte; ++k) {
    if (text[k] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline std::optional<Boundary> parse_boundary(const std::string& s) {
  if (s == "free") return Boundary::Free;
  if (s == "pinned") return Boundary::Pinned;
  if (s == "pinned_ends") return Boundary::PinnedEnds;
  return std::nullopt;
}

inline void read_material(const Reader& r, RunConfig& cfg, std::vector<std::string>& errors, bool check_keys = true) {
  if (check_keys) r.allow({"omega", "kt", "e0", "stiffness"});
  if (!r.has("omega")) errors.push_back(r.path("omega") + ": required");
  if (!r.has("kt")) errors.push_back(r.path("kt") + ": required");
  r.number("omega", cfg.chem.omega);
  r.number("kt", cfg.chem.kt);
  if (r.has("kt") && !(cfg.chem.kt > 0.0)) r.error("kt", "must be positive");
  if (r.has("e0")) {
    const json& v = r.at("e0");
    std::vector<double> flat;
    bool shape_ok = true;
    if (v.is_array() && v.size() == 2 && v[0].is_array()) {
      for (std::size_t i = 0; i < 2 && shape_ok; ++i) {
        if (!v[i].is_array() || v[i].size() != 2) shape_ok = false;
        for (std::size_t j = 0; shape_ok && j < 2; ++j) {
          if (!v[i][j].is_number() || !std::isfinite(v[i][j].get<double>())) shape_ok = false;
          else flat.push_back(v[i][j].get<double>());
        }
      }
      if (!shape_ok) r.error("e0", "expected [[xx, xy], [yx, yy]] with finite entries");
    } else if (auto nums = r.numbers("e0")) {
      flat = *nums;
      if (flat.size() != 3 && flat.size() != 4) {
        r.error("e0", "expected 3 numbers [xx, xy, yy] or 4 numbers [xx, xy, yx, yy]");
        shape_ok = false;
      }
    } else {
      shape_ok = false;
    }
    if (shape_ok && flat.size() == 3) cfg.e0 = Misfit{flat[0], flat[1], flat[2]};
    if (shape_ok && flat.size() == 4) {
      if (flat[1] != flat[2]) {
        r.error("e0", "must be symmetric (xy = " + format_double(flat[1]) + ", yx = " + format_double(flat[2]) + ")");
      } else {
        cfg.e0 = Misfit{flat[0], flat[1], flat[3]};
      }
    }
  }
  if (auto s = r.object("stiffness")) {
    s->allow({"lambda", "mu", "matrix"});
    if (s->has("matrix") && (s->has("lambda") || s->has("mu"))) {
      s->error("matrix", "give either matrix or lambda/mu, not both");
    }
    s->number("lambda", cfg.lambda);
    s->number("mu", cfg.mu);
    if (s->has("matrix")) {
      const json& v = s->at("matrix");
      Mat3 m;
      bool ok = v.is_array() && v.size() == 3;
      for (std::size_t i = 0; ok && i < 3; ++i) {
        ok = v[i].is_array() && v[i].size() == 3;
        for (std::size_t j = 0; ok && j < 3; ++j) {
          ok = v[i][j].is_number() && std::isfinite(v[i][j].get<double>());
          if (ok) m(static_cast<int>(i), static_cast<int>(j)) = v[i][j].get<double>();
        }
      }
      if (!ok) {
        s->error("matrix", "expected a 3x3 array of finite numbers");
      } else {
        try {
          (void)Stiffness(m);
          cfg.stiffness_matrix = m;
        } catch (const ParameterError& e) {
          s->error("matrix", e.what());
        }
      }
    } else if (!(cfg.mu > 0.0) || !(cfg.lambda + cfg.mu > 0.0)) {
      s->error("mu", "isotropic moduli need mu > 0 and lambda + mu > 0");
    }
  }
}

inline void read_solve(const Reader& r, SolveConfig& s, std::vector<std::string>& errors) {
  r.allow({"max_outer", "tol_rel", "cg_tol", "cg_max", "step0", "mass", "seed", "boundary"});
  r.integer("max_outer", s.max_outer);
  r.number("tol_rel", s.tol_rel);
  r.number("cg_tol", s.cg_tol);
  r.integer("cg_max", s.cg_max);
  r.number("step0", s.step0);
  r.number("mass", s.mass);
  r.unsigned64("seed", s.seed);
  std::string b;
  r.string("boundary", b);
  if (!b.empty()) {
    if (auto v = parse_boundary(b)) s.boundary = *v;
    else r.error("boundary", "expected free, pinned or pinned_ends");
  }
  if (s.max_outer < 0) r.error("max_outer", "must be >= 0");
  if (!(s.tol_rel > 0.0)) r.error("tol_rel", "must be positive");
  if (!(s.cg_tol > 0.0)) r.error("cg_tol", "must be positive");
  if (s.cg_max < 1) r.error("cg_max", "must be >= 1");
  if (!(s.step0 > 0.0)) r.error("step0", "must be positive");
  if (s.mass && !(*s.mass >= 0.0 && *s.mass <= 1.0)) r.error("mass", "must lie in [0, 1]");
  (void)errors;
}

inline std::optional<Rect> read_rect(const Reader& r, const std::string& key) {
  auto v = r.numbers(key);
  if (!v) return std::nullopt;
  if (v->size() != 4 || !((*v)[2] > (*v)[0]) || !((*v)[3] > (*v)[1])) {
    r.error(key, "expected [x0, y0, x1, y1] with x1 > x0 and y1 > y0");
    return std::nullopt;
  }
  return Rect{(*v)[0], (*v)[1], (*v)[2], (*v)[3]};
}

inline bool needs_e0(Command c) { return c != Command::Wells && c != Command::Profile; }

}  // namespace detail

/// Parses and validates a run configuration. `command` is the command given on the
/// command line; a "command" key in the document must agree with it.
inline RunConfig parse_config(const std::string& text, Command command) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte);
    throw ConfigError({"parse error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                       e.what()});
  }
  if (!doc.is_object()) throw ConfigError({"config: top level must be an object"});

  RunConfig cfg;
  cfg.command = command;
  std::vector<std::string> errors;
  const detail::Reader root(doc, "", errors);
  root.allow({"command", "material", "omega", "kt", "epsilon", "eps_list", "h_ratio", "grid", "laminate", "solve", "profile",
              "minimize", "cell", "anisotropy", "mass_sweep", "compactness", "output_dir"});

  if (root.has("command")) {
    std::string name;
    root.string("command", name);
    if (!name.empty() && name != to_string(command)) {
      root.error("command", "'" + name + "' does not match the requested command '" + to_string(command) + "'");
    }
  }
  if (root.has("material") && (root.has("omega") || root.has("kt"))) {
    root.error("material", "give omega and kt either inside material or at the top level, not both");
  }
  if (auto m = root.object("material")) {
    detail::read_material(*m, cfg, errors);
  } else if (!root.has("material")) {
    // Shorthand for chemistry-only commands: omega and kt at the top level.
    detail::read_material(root, cfg, errors, false);
  }
  const bool e0_given = doc.contains("material") && doc["material"].is_object() && doc["material"].contains("e0");
  if (detail::needs_e0(command) && !cfg.e0 && !e0_given) errors.push_back("material.e0: required for " + to_string(command));

  root.number("epsilon", cfg.epsilon);
  if (cfg.epsilon && !(*cfg.epsilon > 0.0)) root.error("epsilon", "must be positive");
  if (auto v = root.numbers("eps_list")) {
    cfg.eps_list = *v;
    for (double e : cfg.eps_list)
      if (!(e > 0.0)) {
        root.error("eps_list", "entries must be positive");
        break;
      }
    for (std::size_t k = 1; k < cfg.eps_list.size(); ++k)
      if (!(cfg.eps_list[k] < cfg.eps_list[k - 1])) {
        root.error("eps_list", "eps_list must be strictly decreasing");
        break;
      }
  }
  root.number("h_ratio", cfg.h_ratio);
  if (!(cfg.h_ratio > 0.0)) root.error("h_ratio", "must be positive");

  if (auto g = root.object("grid")) {
    g->allow({"nx", "ny", "lx", "ly", "x0", "y0"});
    GridSpec gs;
    g->integer("nx", gs.nx);
    g->integer("ny", gs.ny);
    g->number("lx", gs.lx);
    g->number("ly", gs.ly);
    g->number("x0", gs.x0);
    g->number("y0", gs.y0);
    if (gs.nx < 2) g->error("nx", "must be >= 2");
    if (gs.ny < 2) g->error("ny", "must be >= 2");
    if (!(gs.lx > 0.0)) g->error("lx", "must be positive");
    if (!(gs.ly > 0.0)) g->error("ly", "must be positive");
    cfg.grid = gs;
  }
  if (auto l = root.object("laminate")) {
    l->allow({"normal", "offsets", "phase"});
    LaminateSpec ls;
    if (auto n = l->vec2("normal")) {
      if (!(n->norm() > 0.0)) l->error("normal", "must be non-zero");
      else ls.normal = n->normalized();
    }
    if (auto o = l->numbers("offsets")) ls.offsets = *o;
    for (std::size_t k = 1; k < ls.offsets.size(); ++k)
      if (!(ls.offsets[k] > ls.offsets[k - 1])) {
        l->error("offsets", "must be strictly increasing");
        break;
      }
    l->string("phase", ls.phase);
    if (ls.phase != "mu0" && ls.phase != "mu1") l->error("phase", "expected mu0 or mu1");
    cfg.laminate = ls;
  }
  if (auto s = root.object("solve")) detail::read_solve(*s, cfg.solve, errors);

  if (auto p = root.object("profile")) {
    p->allow({"mode", "samples"});
    p->string("mode", cfg.profile_mode);
    p->integer("samples", cfg.profile_samples);
    if (cfg.profile_mode != "chem-only" && cfg.profile_mode != "shifted") p->error("mode", "expected chem-only or shifted");
    if (cfg.profile_samples < 2) p->error("samples", "must be >= 2");
  }
  if (auto p = root.object("minimize")) {
    p->allow({"init"});
    p->string("init", cfg.init);
    if (cfg.init != "random" && cfg.init != "recovery" && cfg.init != "uniform") {
      p->error("init", "expected random, recovery or uniform");
    }
  }
  if (auto c = root.object("cell")) {
    c->allow({"normal", "width", "height", "boundary", "width_check", "height_check", "check_eps"});
    if (auto n = c->vec2("normal")) {
      if (!(n->norm() > 0.0)) c->error("normal", "must be non-zero");
      else cfg.cell_normal = n->normalized();
    }
    c->number("width", cfg.cell_width);
    c->number("height", cfg.cell_height);
    if (!(cfg.cell_width > 0.0)) c->error("width", "must be positive");
    if (!(cfg.cell_height > 0.0)) c->error("height", "must be positive");
    std::string b;
    c->string("boundary", b);
    if (!b.empty()) {
      const auto v = detail::parse_boundary(b);
      if (!v || *v == Boundary::Free) c->error("boundary", "expected pinned or pinned_ends");
      else cfg.cell_boundary = *v;
    }
    c->boolean("width_check", cfg.width_check);
    c->boolean("height_check", cfg.height_check);
    c->number("check_eps", cfg.check_eps);
    if (cfg.check_eps && !(*cfg.check_eps > 0.0)) c->error("check_eps", "must be positive");
  }
  if (auto a = root.object("anisotropy")) {
    a->allow({"normal", "control"});
    if (auto n = a->vec2("normal")) {
      if (!(n->norm() > 0.0)) a->error("normal", "must be non-zero");
      else cfg.probe_normal = n->normalized();
    }
    if (a->has("control") && a->at("control").is_null()) {
      cfg.control_normal.reset();
    } else if (auto n = a->vec2("control")) {
      if (!(n->norm() > 0.0)) a->error("control", "must be non-zero");
      else cfg.control_normal = n->normalized();
    }
  }
  if (auto s = root.object("mass_sweep")) {
    s->allow({"m_list", "domain"});
    if (auto v = s->numbers("m_list")) cfg.m_list = *v;
    for (double m : cfg.m_list)
      if (!(m >= 0.0 && m <= 1.0)) {
        s->error("m_list", "entries must lie in [0, 1]");
        break;
      }
    if (auto r = detail::read_rect(*s, "domain")) cfg.domain = *r;
  }
  if (auto s = root.object("compactness")) {
    s->allow({"domain"});
    if (auto r = detail::read_rect(*s, "domain")) cfg.domain = *r;
  }
  root.string("output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) root.error("output_dir", "must not be empty");

  // Command-specific requirements.
  const auto need_eps = [&] {
    if (!cfg.epsilon) errors.push_back("epsilon: required for " + to_string(command));
  };
  const auto need_list = [&](std::size_t min) {
    if (cfg.eps_list.size() < min) {
      errors.push_back("eps_list: " + to_string(command) + " needs at least " + std::to_string(min) + " values");
    }
  };
  switch (command) {
    case Command::Wells:
    case Command::Compat:
      break;
    case Command::Profile:
      need_eps();
      break;
    case Command::Minimize:
      need_eps();
      if (!cfg.grid) errors.push_back("grid: required for minimize");
      if (cfg.init == "recovery" && !cfg.laminate) errors.push_back("laminate: required for recovery init");
      break;
    case Command::Cell:
    case Command::Anisotropy:
      need_list(3);
      break;
    case Command::MassSweep:
      need_eps();
      if (cfg.m_list.empty()) errors.push_back("mass_sweep.m_list: required for mass-sweep");
      break;
    case Command::Compactness:
      if (cfg.eps_list.size() != 2) errors.push_back("eps_list: compactness needs exactly 2 values");
      break;
  }
  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

/// Fully resolved configuration, defaults included.
inline json resolved_config(const RunConfig& c) {
  json j;
  j["command"] = to_string(c.command);
  json mat;
  mat["omega"] = c.chem.omega;
  mat["kt"] = c.chem.kt;
  if (c.e0) mat["e0"] = {c.e0->xx, c.e0->xy, c.e0->yy};
  if (c.stiffness_matrix) {
    json rows = json::array();
    for (int i = 0; i < 3; ++i) rows.push_back({(*c.stiffness_matrix)(i, 0), (*c.stiffness_matrix)(i, 1), (*c.stiffness_matrix)(i, 2)});
    mat["stiffness"] = {{"matrix", rows}};
  } else {
    mat["stiffness"] = {{"lambda", c.lambda}, {"mu", c.mu}};
  }
  j["material"] = mat;
  if (c.epsilon) j["epsilon"] = *c.epsilon;
  if (!c.eps_list.empty()) j["eps_list"] = c.eps_list;
  j["h_ratio"] = c.h_ratio;
  if (c.grid) {
    j["grid"] = {{"nx", c.grid->nx}, {"ny", c.grid->ny}, {"lx", c.grid->lx},
                 {"ly", c.grid->ly}, {"x0", c.grid->x0}, {"y0", c.grid->y0}};
  }
  if (c.laminate) {
    j["laminate"] = {{"normal", {c.laminate->normal.x(), c.laminate->normal.y()}},
                     {"offsets", c.laminate->offsets},
                     {"phase", c.laminate->phase}};
  }
  json s;
  s["max_outer"] = c.solve.max_outer;
  s["tol_rel"] = c.solve.tol_rel;
  s["cg_tol"] = c.solve.cg_tol;
  s["cg_max"] = c.solve.cg_max;
  s["step0"] = c.solve.step0;
  s["mass"] = c.solve.mass ? json(*c.solve.mass) : json(nullptr);
  s["seed"] = c.solve.seed;
  s["boundary"] = gammaphase::to_string(c.solve.boundary);
  j["solve"] = s;
  switch (c.command) {
    case Command::Profile:
      j["profile"] = {{"mode", c.profile_mode}, {"samples", c.profile_samples}};
      break;
    case Command::Minimize:
      j["minimize"] = {{"init", c.init}};
      break;
    case Command::Cell:
    case Command::Anisotropy:
      j["cell"] = {{"normal", {c.cell_normal.x(), c.cell_normal.y()}},
                   {"width", c.cell_width},
                   {"height", c.cell_height},
                   {"boundary", gammaphase::to_string(c.cell_boundary)},
                   {"width_check", c.width_check},
                   {"height_check", c.height_check},
                   {"check_eps", c.check_eps ? json(*c.check_eps) : json(nullptr)}};
      if (c.command == Command::Anisotropy) {
        j["anisotropy"] = {{"normal", {c.probe_normal.x(), c.probe_normal.y()}},
                           {"control", c.control_normal ? json{c.control_normal->x(), c.control_normal->y()}
                                                        : json(nullptr)}};
      }
      break;
    case Command::MassSweep:
      j["mass_sweep"] = {{"m_list", c.m_list}, {"domain", {c.domain.x0, c.domain.y0, c.domain.x1, c.domain.y1}}};
      break;
    case Command::Compactness:
      j["compactness"] = {{"domain", {c.domain.x0, c.domain.y0, c.domain.x1, c.domain.y1}}};
      break;
    default:
      break;
  }
  j["output_dir"] = c.output_dir;
  return j;
}

// ---------------------------------------------------------------------------
// Output

/// Fixed-schema CSV: a version comment, a column header, then rows.
class CsvTable {
 public:
  CsvTable(const std::string& command, std::vector<std::string> columns) : columns_(std::move(columns)) {
    out_ << "# gammaphase v1 " << command << "\n";
    for (std::size_t k = 0; k < columns_.size(); ++k) out_ << (k ? "," : "") << columns_[k];
    out_ << "\n";
  }

  class Row {
   public:
    explicit Row(CsvTable& t) : t_(t) {}
    Row& operator<<(double v) { return cell(format_double(v)); }
    Row& operator<<(int v) { return cell(std::to_string(v)); }
    Row& operator<<(bool v) { return cell(v ? "1" : "0"); }
    Row& operator<<(const std::string& v) { return cell(v); }
    Row& operator<<(const char* v) { return cell(v); }
    ~Row() {
      if (n_ != t_.columns_.size()) t_.bad_ = true;
      t_.out_ << "\n";
    }

   private:
    Row& cell(const std::string& s) {
      t_.out_ << (n_++ ? "," : "") << s;
      return *this;
    }
    CsvTable& t_;
    std::size_t n_ = 0;
  };

  Row row() { return Row(*this); }
  std::string str() const {
    if (bad_) throw Error("csv: row width does not match the header");
    return out_.str();
  }

 private:
  std::vector<std::string> columns_;
  std::ostringstream out_;
  bool bad_ = false;
};

struct RunOutput {
  std::string csv;
  json summary = json::object();
  std::optional<FieldPair> field;
};

namespace detail {

inline double angle_of(const Vec2& v) { return std::atan2(v.y(), v.x()); }

inline CellConfig cell_config(const RunConfig& c) {
  CellConfig cc;
  cc.width = c.cell_width;
  cc.height = c.cell_height;
  cc.h_ratio = c.h_ratio;
  cc.boundary = c.cell_boundary;
  cc.solve = c.solve;
  cc.threads = c.threads;
  return cc;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline RunOutput run_wells(const RunConfig& c) {
  const WellAnalysis w = analyze_wells(c.chem);
  CsvTable t("wells", {"kind", "mu0", "mu1", "fmin", "mm_constant"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double mm = w.double_well() ? mm_constant(c.chem, w) : nan;
  if (w.double_well()) {
    t.row() << to_string(w.kind) << w.mu0 << w.mu1 << w.fmin << mm;
  } else {
    t.row() << to_string(w.kind) << nan << nan << w.fmin << nan;
  }
  RunOutput out;
  out.csv = t.str();
  out.summary = {{"kind", to_string(w.kind)}, {"mm_constant", number_or_null(mm)}};
  return out;
}

inline RunOutput run_compat(const RunConfig& c) {
  const WellAnalysis w = analyze_wells(c.chem);
  const auto conns = compatibility(*c.e0, w);
  CsvTable t("compat", {"s", "nu_angle", "a1", "a2", "residual"});
  double worst = 0.0;
  for (const auto& k : conns) {
    const double r = k.residual(*c.e0);
    worst = std::max(worst, r);
    t.row() << k.s << k.angle() << k.a.x() << k.a.y() << r;
  }
  RunOutput out;
  out.csv = t.str();
  out.summary = {{"connections", conns.size()}, {"max_residual", worst}};
  return out;
}

inline RunOutput run_profile(const RunConfig& c) {
  const Material m = c.material(*c.epsilon);
  const ProfileSpec spec = build_profile(m, c.profile_mode == "shifted" ? WellMode::Shifted : WellMode::ChemOnly);
  CsvTable t("profile", {"s", "phi", "dphi", "inverse_error"});
  double worst = 0.0;
  for (int k = 0; k < c.profile_samples; ++k) {
    const double s = m.wells.mu0 + m.wells.gap() * k / (c.profile_samples - 1);
    const double p = spec.phi(s);
    const double err = std::abs(spec.inverse(p) - s);
    worst = std::max(worst, err);
    t.row() << s << p << spec.derivative(s) << err;
  }
  RunOutput out;
  out.csv = t.str();
  out.summary = {{"mode", to_string(spec.mode())},
                 {"width", spec.width()},
                 {"sqrt_eps", std::sqrt(*c.epsilon)},
                 {"centroid", spec.centroid()},
                 {"max_inverse_error", worst}};
  return out;
}

inline RunOutput minimize_output(const SolveReport& rep) {
  CsvTable t("minimize", {"iteration", "energy", "mean"});
  for (std::size_t k = 0; k < rep.energy_trace.size(); ++k)
    t.row() << static_cast<int>(k) << rep.energy_trace[k] << rep.mean_trace[k];
  RunOutput out;
  out.csv = t.str();
  out.summary = {{"energy", rep.breakdown.total}, {"chem", rep.breakdown.chem},
                 {"grad", rep.breakdown.grad},    {"elastic", rep.breakdown.elastic},
                 {"iterations", rep.iterations},  {"cg_iterations", rep.cg_iterations},
                 {"converged", rep.converged}};
  out.field = rep.final;
  return out;
}

inline RunOutput run_minimize(const RunConfig& c) {
  const Material m = c.material(*c.epsilon);
  const Grid g = c.grid->make();
  FieldPair init(g);
  if (c.init == "random") {
    init = random_init(g, m, c.solve.seed, c.solve.cg_tol, c.solve.cg_max);
  } else if (c.init == "uniform") {
    const double level = c.solve.mass.value_or(m.wells.mu0);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const std::size_t k = g.index(i, j);
        const Vec2 u = level * (m.e0.matrix() * g.node(i, j));
        init.c[k] = level;
        init.u.x[k] = u.x();
        init.u.y[k] = u.y();
      }
  } else {
    const LaminateSpec& ls = *c.laminate;
    const Laminate lam{ls.normal, ls.offsets, ls.phase == "mu0" ? m.wells.mu0 : m.wells.mu1, g.bounds()};
    const auto conns = compatibility(m.e0, m.wells);
    validate_laminate(lam, m.wells, &conns);
    const RankOneConnection* conn = nullptr;
    for (const auto& k : conns)
      if (std::abs(std::abs(k.nu.dot(lam.normal)) - 1.0) <= 1e-10) conn = &k;
    const ProfileSpec spec = build_profile(m);
    init = c.solve.mass ? mass_tuned_recovery(lam, *conn, spec, g, m.wells, m.e0, *c.solve.mass).pair
                        : recovery_pair(lam, *conn, spec, g, m.wells, m.e0);
  }
  return minimize_output(minimize(init, m, c.solve));
}

inline RunOutput run_cell(const RunConfig& c) {
  const Material m = c.material(c.eps_list.front());
  const CellConfig cc = cell_config(c);
  const CellEstimate est = cell_problem(c.cell_normal, m, c.eps_list, cc);
  CsvTable t("cell", {"kind", "eps", "width", "height", "energy", "chem", "grad", "elastic", "iterations", "converged",
                      "valid"});
  for (const CellRun& r : est.runs) {
    t.row() << "sweep" << r.eps << cc.width << cc.height << r.energy << r.breakdown.chem << r.breakdown.grad
            << r.breakdown.elastic << r.iterations << r.converged << r.valid;
  }
  RunOutput out;
  const double kappa = mm_constant(m.chem, m.wells);
  out.summary = {{"normal", {est.nu.x(), est.nu.y()}},
                 {"connection_residual", est.connection_residual},
                 {"mm_constant", kappa},
                 {"fitted", est.fitted},
                 {"k_hat", number_or_null(est.k_hat)},
                 {"c1", number_or_null(est.c1)},
                 {"fit_residual", number_or_null(est.fit_residual)},
                 {"k_hat_relative_error", number_or_null(std::abs(est.k_hat - kappa) / kappa)}};
  const double ce = c.check_eps.value_or(c.eps_list.back());
  const CellFrame f = cell_frame(c.cell_normal, m);
  const auto checked_run = [&](const CellConfig& k) {
    CellRun r = cell_run(f, ce, k);
    if (!r.valid) throw NonConvergence("cell check: " + r.error, std::numeric_limits<double>::quiet_NaN(), 0);
    t.row() << "width" << ce << k.width << k.height << r.energy
            << r.breakdown.chem << r.breakdown.grad << r.breakdown.elastic << r.iterations << r.converged << r.valid;
    return r.energy;
  };
  // The base energy at check_eps comes from the sweep when available.
  double base = std::numeric_limits<double>::quiet_NaN();
  for (const CellRun& r : est.runs)
    if (r.eps == ce && r.valid) base = r.energy;
  if ((c.width_check || c.height_check) && !std::isfinite(base)) {
    CellRun r = cell_run(f, ce, cc);
    if (!r.valid) throw NonConvergence("cell check: " + r.error, std::numeric_limits<double>::quiet_NaN(), 0);
    base = r.energy;
  }
  if (c.width_check) {
    CellConfig wide = cc;
    wide.width = 2.0 * cc.width;
    out.summary["width_ratio"] = checked_run(wide) / base;
  }
  if (c.height_check) {
    const HeightReport h = height_independence_check(c.cell_normal, m, ce, cc);
    const CellRun& r = h.reduced;
    t.row() << "height" << ce << cc.width << 0.5 * cc.height << r.energy << r.breakdown.chem << r.breakdown.grad
            << r.breakdown.elastic << r.iterations << r.converged << r.valid;
    out.summary["height_ratio"] = h.ratio;
    out.summary["far_band_fraction"] = h.far_band_fraction;
  }
  if (c.width_check || c.height_check) out.summary["check_eps"] = ce;
  if (!est.fitted) {
    out.csv = t.str();
    throw NonConvergence("cell: fewer than 3 converged runs, no fit", std::numeric_limits<double>::quiet_NaN(), 0);
  }
  out.csv = t.str();
  return out;
}

inline RunOutput run_anisotropy(const RunConfig& c) {
  const Material m = c.material(c.eps_list.front());
  const CellConfig cc = cell_config(c);
  CsvTable t("anisotropy", {"role", "nu_angle", "eps", "energy", "elastic", "iterations", "converged", "valid"});
  RunOutput out;
  const auto emit = [&](const char* role, const AnisotropyReport& r) {
    for (const CellRun& run : r.estimate.runs)
      t.row() << role << angle_of(r.estimate.nu) << run.eps << run.energy << run.breakdown.elastic << run.iterations
              << run.converged << run.valid;
    out.summary[role] = {{"normal", {r.estimate.nu.x(), r.estimate.nu.y()}},
                         {"compatible", r.compatible},
                         {"connection_residual", r.estimate.connection_residual},
                         {"delta_min", number_or_null(r.delta_min)},
                         {"strictly_increasing", r.strictly_increasing}};
  };
  emit("probe", anisotropy_probe(c.probe_normal, m, c.eps_list, cc));
  if (c.control_normal) emit("control", anisotropy_probe(*c.control_normal, m, c.eps_list, cc));
  out.csv = t.str();
  return out;
}

inline RunOutput run_mass_sweep(const RunConfig& c) {
  const Material m = c.material(*c.epsilon);
  CellConfig cc = cell_config(c);
  const Laminate lam{Vec2::UnitY(), {}, m.wells.mu0, c.domain};
  const auto entries = mass_sweep(lam, m, c.m_list, cc);
  CsvTable t("mass-sweep", {"m", "energy", "sharp_energy", "max_mean_error", "predicted_position",
                            "measured_position", "position_error_cells", "iterations", "valid"});
  double worst = 0.0;
  int failures = 0;
  json errors = json::array();
  for (const MassEntry& e : entries) {
    t.row() << e.m << e.energy << e.sharp_energy << e.max_mean_error << e.predicted_position << e.measured_position
            << e.position_error_cells << e.iterations << e.valid;
    if (e.valid) worst = std::max(worst, e.max_mean_error);
    if (!e.valid) {
      ++failures;
      errors.push_back({{"m", e.m}, {"error", e.error}});
    }
  }
  RunOutput out;
  out.csv = t.str();
  out.summary = {{"max_mean_error", worst}, {"failed_entries", failures}, {"entry_errors", errors}};
  return out;
}

inline RunOutput run_compactness(const RunConfig& c) {
  const Material m = c.material(c.eps_list.front());
  const CompactnessReport rep = compactness_probe(m, c.domain, c.eps_list, c.solve.seed, cell_config(c));
  CsvTable t("compactness", {"eps", "mismatch_sq", "well_fraction", "interface_length", "energy", "mean",
                             "iterations", "converged"});
  for (const CompactnessEntry& e : rep.entries)
    t.row() << e.eps << e.mismatch_sq << e.well_fraction << e.interface_length << e.energy << e.mean << e.iterations
            << e.converged;
  RunOutput out;
  out.csv = t.str();
  out.summary = {{"mismatch_ratio", number_or_null(rep.mismatch_ratio)}};
  return out;
}

}  // namespace detail

/// Runs one command and returns its artifacts; errors propagate as exceptions.
inline RunOutput execute(const RunConfig& c) {
  switch (c.command) {
    case Command::Wells: return detail::run_wells(c);
    case Command::Compat: return detail::run_compat(c);
    case Command::Profile: return detail::run_profile(c);
    case Command::Minimize: return detail::run_minimize(c);
    case Command::Cell: return detail::run_cell(c);
    case Command::Anisotropy: return detail::run_anisotropy(c);
    case Command::MassSweep: return detail::run_mass_sweep(c);
    case Command::Compactness: return detail::run_compactness(c);
  }
  throw Error("unknown command");
}

/// Exit status and manifest label for an exception.
inline std::pair<int, std::string> classify(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return {kExitInvalid, "ValidationError"};
  if (dynamic_cast<const ParameterError*>(&e)) return {kExitInvalid, "ParameterError"};
  if (dynamic_cast<const DomainError*>(&e)) return {kExitInvalid, "DomainError"};
  if (dynamic_cast<const NonConvergence*>(&e)) return {kExitSolver, "NonConvergence"};
  if (dynamic_cast<const StepFailure*>(&e)) return {kExitSolver, "StepFailure"};
  if (dynamic_cast<const QuadratureError*>(&e)) return {kExitSolver, "QuadratureError"};
  if (dynamic_cast<const GeometryError*>(&e)) return {kExitGeometry, "GeometryError"};
  if (dynamic_cast<const RangeError*>(&e)) return {kExitGeometry, "RangeError"};
  if (dynamic_cast<const IncompatibleMisfit*>(&e)) return {kExitGeometry, "IncompatibleMisfit"};
  return {kExitFailure, "Error"};
}

/// Creates <base>/<command>-<YYYYmmdd-HHMMSS>[-k], unique within base.
inline std::filesystem::path make_run_dir(const std::filesystem::path& base, const std::string& command) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  std::filesystem::create_directories(base);
  const std::string stem = command + "-" + stamp;
  for (int k = 0;; ++k) {
    const std::filesystem::path p = base / (k == 0 ? stem : stem + "-" + std::to_string(k));
    if (std::filesystem::create_directory(p)) return p;
  }
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << content;
  if (!os) throw Error("write failed for " + p.string());
}

struct RunResult {
  int exit_code = kExitOk;
  std::filesystem::path run_dir;
  json manifest;
};

/// Parses `config_text`, runs the command and writes the run directory. Every failure
/// is recorded under "error" in manifest.json. Only a failure to create the run
/// directory itself propagates.
inline RunResult run(Command command, const std::optional<std::string>& config_text, const std::string& config_source,
                     std::optional<std::string> out_override = {}, std::optional<std::uint64_t> seed_override = {},
                     int threads = 1) {
  RunResult res;
  json& man = res.manifest;
  man["tool"] = "gammaphase";
  man["version"] = GAMMAPHASE_VERSION;
  man["command"] = to_string(command);
  man["config_source"] = config_source;

  std::optional<RunConfig> cfg;
  std::string out_dir = out_override.value_or("runs");
  std::optional<std::pair<int, json>> failure;
  if (!out_override && config_text) {
    // Honour output_dir even when the rest of the document is invalid.
    const json raw = json::parse(*config_text, nullptr, false);
    if (raw.is_object() && raw.contains("output_dir") && raw["output_dir"].is_string() &&
        !raw["output_dir"].get<std::string>().empty()) {
      out_dir = raw["output_dir"].get<std::string>();
    }
  }
  try {
    if (!config_text) throw ConfigError({"cannot read config file " + config_source});
    cfg = parse_config(*config_text, command);
    if (seed_override) cfg->solve.seed = *seed_override;
    if (out_override) cfg->output_dir = *out_override;
    cfg->threads = std::max(1, threads);
    out_dir = cfg->output_dir;
    man["seed"] = cfg->solve.seed;
    man["threads"] = cfg->threads;
    man["config"] = resolved_config(*cfg);
  } catch (const ConfigError& e) {
    failure = {{kExitInvalid, {{"type", "ValidationError"}, {"message", e.what()}, {"problems", e.problems()}}}};
  }

  res.run_dir = make_run_dir(out_dir, to_string(command));
  if (!failure) {
    try {
      RunOutput out = execute(*cfg);
      man["summary"] = out.summary;
      write_file(res.run_dir / "result.csv", out.csv);
      if (out.field) save_snapshot((res.run_dir / "field.txt").string(), *out.field);
    } catch (const MinimizeNonConvergence& e) {
      RunOutput partial = detail::minimize_output(e.partial());
      write_file(res.run_dir / "result.csv", partial.csv);
      if (partial.field) save_snapshot((res.run_dir / "field.txt").string(), *partial.field);
      failure = {{kExitSolver, {{"type", "NonConvergence"}, {"message", e.what()}}}};
    } catch (const std::exception& e) {
      const auto [code, type] = classify(e);
      failure = {{code, {{"type", type}, {"message", e.what()}}}};
    }
  }
  if (failure) {
    res.exit_code = failure->first;
    man["error"] = failure->second;
  }
  man["exit_code"] = res.exit_code;
  write_file(res.run_dir / "manifest.json", man.dump(2) + "\n");
  return res;
}

}  // namespace gammaphase::cli
