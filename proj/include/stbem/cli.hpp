#pragma once

#include "stbem/assembly.hpp"
#include "stbem/core.hpp"
#include "stbem/experiments.hpp"
#include "stbem/geometry.hpp"
#include "stbem/kernel_checks.hpp"
#include "stbem/solver.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace stbem::cli {

using nlohmann::json;

enum Exit { ok = 0, validation = 2, numeric = 3 };

/// Validation failure tied to one configuration field.
struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string f, const std::string& what)
      : std::runtime_error(f + ": " + what), field(std::move(f)) {}
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"solve", "converge", "divergence",
                                          "check-b", "check-kernels"};
  return c;
}

/// Defaults; a config file overrides these, and flags override the file.
inline json default_config() {
  return {
      {"command", "solve"},
      {"mesh", {{"generator", "cube"}, {"subdivisions", 2}, {"side", 1.0}}},
      {"time", {{"final_time", 1.0}, {"steps", 8}, {"grading", 1.0}}},
      {"alpha", 1.0},
      {"problem", "dirichlet"},
      {"datum", {{"kind", "manufactured"}, {"source", {2.5, 0.5, 0.5}}, {"value", 1.0}}},
      {"quadrature_level", 3},
      {"history_level", 4},
      {"levels", 3},
      {"epsilons", {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4}},
      {"samples", 10000},
      {"seed", 0},
      {"threads", 0},
      {"out", "stbem_out"},
  };
}

// Recursive merge; objects merge key by key, everything else replaces.
inline void merge(json& base, const json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() &&
        it.value().is_object())
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

namespace detail {

inline const json& field(const json& j, const std::string& path) {
  const json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (!node->is_object() || !node->contains(key))
      throw ConfigError(path, "missing");
    node = &(*node)[key];
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

inline double number(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_number()) throw ConfigError(path, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
  return d;
}

inline double positive(const json& j, const std::string& path) {
  const double d = number(j, path);
  if (!(d > 0.0)) throw ConfigError(path, "must be > 0");
  return d;
}

inline int integer(const json& j, const std::string& path, int lo, int hi) {
  const json& v = field(j, path);
  if (!v.is_number_integer()) throw ConfigError(path, "must be an integer");
  const auto i = v.get<long long>();
  if (i < lo || i > hi)
    throw ConfigError(path, "must lie in [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "]");
  return static_cast<int>(i);
}

inline std::string text(const json& j, const std::string& path,
                        const std::vector<std::string>& allowed) {
  const json& v = field(j, path);
  if (!v.is_string()) throw ConfigError(path, "must be a string");
  const auto s = v.get<std::string>();
  if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError(path, "must be one of " + list + " (got '" + s + "')");
  }
  return s;
}

inline Vec3 point(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3)
    throw ConfigError(path, "must be an array of three numbers");
  Vec3 p;
  for (int i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw ConfigError(path, "must hold numbers");
    p[i] = v[i].get<double>();
  }
  if (!all_finite(p)) throw ConfigError(path, "must be finite");
  return p;
}

}  // namespace detail

/// Fully validated run description.
struct RunConfig {
  std::string command;
  json resolved;
  SurfaceMesh mesh;
  TimePartition partition;
  KernelParams params{1.0};
  DatumKind problem = DatumKind::dirichlet;
  std::string datum_kind;
  Vec3 source{2.5, 0.5, 0.5};
  double datum_value = 1.0;
  AssemblyOptions assembly;
  int levels = 3;
  std::vector<double> epsilons;
  int samples = 10000;
  unsigned seed = 0;
  unsigned threads = 0;
  std::vector<SpaceTimePoint> probes;
  std::filesystem::path out;
};

inline SurfaceMesh resolve_mesh(const json& c) {
  const json& m = detail::field(c, "mesh");
  if (!m.is_object()) throw ConfigError("mesh", "must be an object");
  try {
    if (m.contains("file")) {
      if (!m["file"].is_string()) throw ConfigError("mesh.file", "must be a path");
      const std::string path = m["file"].get<std::string>();
      if (!std::filesystem::is_regular_file(path))
        throw ConfigError("mesh.file", "no such file '" + path + "'");
      return load_mesh(path);
    }
    const auto gen = detail::text(c, "mesh.generator", {"cube", "icosphere"});
    if (gen == "cube")
      return generate_cube_mesh(detail::integer(c, "mesh.subdivisions", 1, 64),
                                m.contains("side") ? detail::positive(c, "mesh.side") : 1.0);
    return generate_icosphere(detail::integer(c, "mesh.refinements", 0, 6),
                              m.contains("radius") ? detail::positive(c, "mesh.radius") : 1.0);
  } catch (const Error& e) {
    throw ConfigError("mesh", e.what());
  }
}

inline RunConfig resolve(json c) {
  RunConfig r;
  r.command = detail::text(c, "command", commands());
  r.params = KernelParams(detail::positive(c, "alpha"));
  r.mesh = resolve_mesh(c);
  const double T = detail::positive(c, "time.final_time");
  const int steps = detail::integer(c, "time.steps", 1, 4096);
  const double grading = detail::positive(c, "time.grading");
  r.partition = grading == 1.0
                    ? make_time_partition(T, steps)
                    : make_time_partition(T, steps, PowerGrading{grading});
  r.problem = detail::text(c, "problem", {"dirichlet", "neumann"}) == "dirichlet"
                  ? DatumKind::dirichlet
                  : DatumKind::neumann;
  r.datum_kind = detail::text(c, "datum.kind", {"manufactured", "constant", "zero"});
  r.source = detail::point(detail::field(c, "datum.source"), "datum.source");
  r.datum_value = detail::number(c, "datum.value");
  r.assembly.level = detail::integer(c, "quadrature_level", 0, 8);
  r.assembly.history_level = detail::integer(c, "history_level", 0, 12);
  r.levels = detail::integer(c, "levels", 1, 6);
  const json& eps = detail::field(c, "epsilons");
  if (!eps.is_array() || eps.size() < 3)
    throw ConfigError("epsilons", "must be an array of at least three values");
  for (const auto& e : eps) {
    if (!e.is_number()) throw ConfigError("epsilons", "must hold numbers");
    const double v = e.get<double>();
    if (!(v > 0.0 && v < T))
      throw ConfigError("epsilons", "values must lie in (0, time.final_time)");
    if (!r.epsilons.empty() && !(v < r.epsilons.back()))
      throw ConfigError("epsilons", "values must strictly decrease");
    r.epsilons.push_back(v);
  }
  r.samples = detail::integer(c, "samples", 1, 10000000);
  r.seed = static_cast<unsigned>(detail::integer(c, "seed", 0, 1 << 30));
  r.threads = static_cast<unsigned>(detail::integer(c, "threads", 0, 1024));
  if (c.contains("probes")) {
    const json& p = c["probes"];
    if (!p.is_array()) throw ConfigError("probes", "must be an array of [x, y, z, t]");
    for (const auto& q : p) {
      if (!q.is_array() || q.size() != 4)
        throw ConfigError("probes", "each probe must be [x, y, z, t]");
      for (const auto& v : q)
        if (!v.is_number()) throw ConfigError("probes", "must hold numbers");
      const double t = q[3].get<double>();
      if (!(t > 0.0 && t <= T))
        throw ConfigError("probes", "probe times must lie in (0, time.final_time]");
      r.probes.push_back({Vec3(q[0].get<double>(), q[1].get<double>(), q[2].get<double>()), t});
    }
  } else {
    r.probes = default_probes(T);
  }
  const json& out = detail::field(c, "out");
  if (!out.is_string() || out.get<std::string>().empty())
    throw ConfigError("out", "must be a directory path");
  r.out = out.get<std::string>();
  r.resolved = std::move(c);
  return r;
}

inline BoundaryDatum make_datum(const RunConfig& r) {
  if (r.datum_kind == "manufactured") {
    ManufacturedSolution m;
    m.source = r.source;
    m.params = r.params;
    return m.datum(r.problem);
  }
  const double v = r.datum_kind == "zero" ? 0.0 : r.datum_value;
  return {[v](const Vec3&, const Vec3&, double) { return v; }, r.problem};
}

inline json plan(const RunConfig& r) {
  json p;
  p["command"] = r.command;
  p["triangles"] = r.mesh.triangle_count();
  p["vertices"] = r.mesh.vertex_count();
  p["time_steps"] = r.partition.intervals();
  p["uniform_time_grid"] = r.partition.uniform();
  const std::size_t spatial = r.problem == DatumKind::dirichlet
                                  ? r.mesh.triangle_count()
                                  : r.mesh.vertex_count();
  if (r.command == "solve") p["unknowns"] = spatial * r.partition.intervals();
  p["workers"] = r.threads == 0 ? worker_count() : r.threads;
  p["out"] = r.out.string();
  return p;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot write " + path.string());
  return f;
}

inline void write_study(const RunConfig& r, const StudyResult& s,
                        json& meta) {
  auto f = open_output(r.out / (s.name + ".csv"));
  s.write_csv(f);
  meta["results"][s.name] = s.metadata;
}

}  // namespace detail

/// Executes a validated configuration. Returns the process exit status.
inline int execute(const RunConfig& r, std::ostream& log) {
  set_worker_count(r.threads);
  std::error_code ec;
  std::filesystem::create_directories(r.out, ec);
  if (ec || !std::filesystem::is_directory(r.out))
    throw ConfigError("out", "cannot create directory '" + r.out.string() + "'");
  json meta;
  meta["config"] = r.resolved;
  meta["plan"] = plan(r);
  int status = Exit::ok;

  if (r.command == "solve") {
    const BoundaryDatum datum = make_datum(r);
    const SolveReport report =
        r.problem == DatumKind::dirichlet
            ? solve_dirichlet(r.mesh, r.partition, datum, r.params, r.assembly)
            : solve_neumann(r.mesh, r.partition, datum, r.params, r.assembly);
    const auto values = evaluate_solution_interior(report, r.probes);
    {
      auto f = detail::open_output(r.out / "density.csv");
      write_density_csv(f, report.density);
    }
    {
      auto f = detail::open_output(r.out / "interior.csv");
      write_evaluations_csv(f, r.probes, values);
    }
    json res;
    res["wall_seconds"] = report.wall_seconds;
    res["initial_trace_nonzero"] = report.initial_trace_nonzero;
    res["max_block_residual"] =
        *std::max_element(report.stats.residuals.begin(), report.stats.residuals.end());
    res["min_block_rcond"] =
        *std::min_element(report.stats.rcond.begin(), report.stats.rcond.end());
    if (r.datum_kind == "manufactured") {
      ManufacturedSolution m;
      m.source = r.source;
      m.params = r.params;
      double err = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double exact = m.value(r.probes[i].x, r.probes[i].t);
        err = std::max(err, std::abs(values[i] - exact));
        scale = std::max(scale, std::abs(exact));
      }
      res["max_abs_error"] = err;
      res["relative_error"] = scale > 0 ? err / scale : err;
    }
    if (report.initial_trace_nonzero)
      log << "warning: boundary datum does not vanish at t = 0\n";
    meta["results"]["solve"] = res;
  } else if (r.command == "converge") {
    ConvergenceOptions options;
    options.levels = r.levels;
    options.final_time = r.partition.final_time();
    options.base_steps = static_cast<int>(r.partition.intervals());
    options.solution.source = r.source;
    options.solution.params = r.params;
    options.assembly = r.assembly;
    detail::write_study(r, convergence_study(r.problem, options), meta);
  } else if (r.command == "divergence") {
    DivergenceOptions options;
    options.level = r.assembly.level;
    detail::write_study(r, divergence_study(r.mesh, r.partition.final_time(),
                                            r.params.alpha(), r.epsilons, options),
                        meta);
  } else if (r.command == "check-b") {
    detail::write_study(r, b_consistency_check(r.mesh, r.partition, r.params, r.assembly),
                        meta);
  } else {
    StudyResult s;
    s.name = "kernel_checks";
    s.columns = {"check", "samples", "failures"};
    int total = 0;
    json names = json::array();
    const auto outcomes = checks::run_kernel_suite(r.samples, r.seed);
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      s.rows.push_back({static_cast<double>(i), static_cast<double>(outcomes[i].samples),
                        static_cast<double>(outcomes[i].failures)});
      names.push_back(outcomes[i].name);
      total += outcomes[i].failures;
      if (outcomes[i].failures > 0)
        log << "kernel check " << outcomes[i].name << ": " << outcomes[i].failures
            << " of " << outcomes[i].samples << " samples failed\n";
    }
    s.metadata["check_names"] = names;
    s.metadata["total_failures"] = total;
    detail::write_study(r, s, meta);
    if (total > 0) status = Exit::numeric;
  }
  auto f = detail::open_output(r.out / "meta.json");
  f << meta.dump(2) << '\n';
  return status;
}

/// Parses argv, merges defaults, config file and flags, validates and runs.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Space-time Galerkin BEM for the heat equation"};
  std::string command, config_path, out_dir, problem, datum;
  std::optional<int> threads, level;
  bool dry_run = false;
  app.add_option("command", command, "solve | converge | divergence | check-b | check-kernels");
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--threads", threads, "worker count (0 = hardware parallelism)");
  app.add_option("--quad-level", level, "quadrature level");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--problem", problem, "dirichlet | neumann");
  app.add_option("--datum", datum, "manufactured | constant | zero");
  app.add_flag("--dry-run", dry_run, "validate and print the plan only");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return Exit::ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return Exit::validation;
  }

  try {
    json config = default_config();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("config", "cannot open '" + config_path + "'");
      json file;
      try {
        file = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
      }
      if (!file.is_object()) throw ConfigError("config", "must be a JSON object");
      merge(config, file);
    }
    if (!command.empty()) config["command"] = command;
    if (threads) config["threads"] = *threads;
    if (level) config["quadrature_level"] = *level;
    if (!out_dir.empty()) config["out"] = out_dir;
    if (!problem.empty()) config["problem"] = problem;
    if (!datum.empty()) config["datum"]["kind"] = datum;

    const RunConfig r = resolve(std::move(config));
    if (dry_run) {
      json p;
      p["config"] = r.resolved;
      p["plan"] = plan(r);
      out << p.dump(2) << '\n';
      return Exit::ok;
    }
    return execute(r, err);
  } catch (const ConfigError& e) {
    err << "validation error: " << e.what() << '\n';
    return Exit::validation;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::invalid_argument || e.kind() == ErrorKind::io) {
      err << "validation error: " << e.what() << '\n';
      return Exit::validation;
    }
    err << "numeric error: " << e.what() << '\n';
    return Exit::numeric;
  }
}

}  // namespace stbem::cli
