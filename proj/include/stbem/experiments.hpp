#pragma once

#include "stbem/assembly.hpp"
#include "stbem/core.hpp"
#include "stbem/geometry.hpp"
#include "stbem/kernels.hpp"
#include "stbem/quadrature.hpp"
#include "stbem/solver.hpp"

#include "json.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace stbem {

/// Table of rows plus free-form metadata, written as CSV and a JSON sidecar.
struct StudyResult {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  nlohmann::json metadata = nlohmann::json::object();

  std::vector<double> column(const std::string& label) const {
    std::size_t c = 0;
    while (c < columns.size() && columns[c] != label) ++c;
    require(c < columns.size(), ErrorKind::invalid_argument,
            "no column named " + label);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }

  void write_csv(std::ostream& out) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      out << (c ? "," : "") << columns[c];
    out << '\n' << std::setprecision(17);
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << r[c];
      out << '\n';
    }
  }

  void write_json(std::ostream& out) const {
    nlohmann::json j = metadata;
    j["study"] = name;
    out << j.dump(2) << '\n';
  }
};

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::invalid_argument,
          "slope fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, ErrorKind::domain_error,
            "log-log fit needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct DivergenceOptions {
  int level = 2;
  int radial_layers = 6;
  double radial_ratio = 0.2;
  int disjoint_boost = 1;
  double separation = 2.0;
};

namespace detail {

// (1 - (1 + x) e^{-x}) / x^2
inline double phi2(double x) {
  if (x < 1e-3) return 0.5 - x / 3.0 + x * x / 8.0;
  return -std::expm1(-x) / (x * x) - std::exp(-x) / x;
}

// Psi(h) / h^4 for f = H1(., s).
inline double h1_moment(double h, double s, double alpha) {
  const double c = 2.0 * std::sqrt(alpha * s);
  return (std::erfc(h / c) / (3.0 * h) +
          phi2(h * h / (c * c)) / (3.0 * std::sqrt(std::numbers::pi) * c)) /
         (4.0 * std::numbers::pi * alpha);
}

// Psi(h) / h^4 for f = G(., eps).
inline double gaussian_moment(double h, double eps, double alpha) {
  const double a = 4.0 * alpha * eps;
  return 0.5 * phi2(h * h / a) / std::pow(std::numbers::pi * a, 1.5);
}

}  // namespace detail

/// I_eps = int_Gamma int_Gamma (T - eps) G(x - y, eps)
///         + [erf(|x-y| / (2 sqrt(alpha T))) - erf(|x-y| / (2 sqrt(alpha eps)))]
///           / (4 pi alpha |x - y|)
/// for each eps, together with the erf part J_eps alone. Pairs sharing a
/// vertex are integrated exactly along rays from the shared point.
inline StudyResult divergence_study(const SurfaceMesh& mesh, double final_time,
                                    double alpha,
                                    const std::vector<double>& epsilons,
                                    const DivergenceOptions& options = {}) {
  require(std::isfinite(alpha) && alpha > 0.0, ErrorKind::invalid_argument,
          "alpha must be positive");
  require(std::isfinite(final_time) && final_time > 0.0,
          ErrorKind::invalid_argument, "final time must be positive");
  require(epsilons.size() >= 3, ErrorKind::invalid_argument,
          "need at least three epsilon values");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    require(epsilons[i] > 0.0 && epsilons[i] < final_time,
            ErrorKind::invalid_argument, "epsilon must lie in (0, T)");
    require(i == 0 || epsilons[i] < epsilons[i - 1],
            ErrorKind::invalid_argument, "epsilons must strictly decrease");
  }
  const std::size_t ne = epsilons.size();
  const auto tasks = detail::upper_pairs(mesh);
  // Per pair: G part and erf part for every epsilon.
  std::vector<std::vector<double>> results(tasks.size());
  PairRuleOptions ray;
  ray.level = options.level;
  ray.radial_layers = options.radial_layers;
  ray.radial_ratio = options.radial_ratio;
  AssemblyOptions tiers;
  tiers.level = options.level;
  tiers.near_boost = options.disjoint_boost;
  tiers.separation = options.separation;

  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto& task = tasks[i];
    const TrianglePoints a = triangle_points(mesh, task.a);
    const TrianglePoints b = triangle_points(mesh, task.b);
    std::vector<double> out(2 * ne, 0.0);
    if (task.adj.kind != AdjacencyKind::disjoint) {
      for_each_ray_node(a, b, task.adj, ray, [&](double h, double w) {
        const double tail = detail::h1_moment(h, final_time, alpha);
        for (std::size_t e = 0; e < ne; ++e) {
          const double eps = epsilons[e];
          out[e] += w * (final_time - eps) *
                    detail::gaussian_moment(h, eps, alpha);
          out[ne + e] += w * (detail::h1_moment(h, eps, alpha) - tail);
        }
      });
    } else {
      PairRuleOptions rule;
      rule.level = detail::pair_levels(a, b, task.adj, tiers).near;
      for_each_pair_node(a, b, task.adj, pair_rule(rule),
                         [&](const PairNode& node) {
                           const double rho = (node.x - node.y).norm();
                           const double rho2 = rho * rho;
                           const double tail =
                               detail::h1_unchecked(rho, final_time, alpha);
                           for (std::size_t e = 0; e < ne; ++e) {
                             const double eps = epsilons[e];
                             out[e] += node.weight * (final_time - eps) *
                                       detail::kernel_unchecked(rho2, eps, alpha);
                             out[ne + e] +=
                                 node.weight *
                                 (detail::h1_unchecked(rho, eps, alpha) - tail);
                           }
                         });
    }
    results[i] = std::move(out);
  });

  std::vector<double> gauss_part(ne, 0.0), erf_part(ne, 0.0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double mult = tasks[i].a == tasks[i].b ? 1.0 : 2.0;
    for (std::size_t e = 0; e < ne; ++e) {
      gauss_part[e] += mult * results[i][e];
      erf_part[e] += mult * results[i][ne + e];
    }
  }

  StudyResult r;
  r.name = "divergence";
  r.columns = {"epsilon", "I_eps", "J_eps"};
  std::vector<double> fit_x, fit_y;
  bool positive = true;
  for (std::size_t e = 0; e < ne; ++e) {
    const double total = gauss_part[e] + erf_part[e];
    r.rows.push_back({epsilons[e], total, erf_part[e]});
    positive = positive && total > 0.0;
    if (e > 0) {
      fit_x.push_back(epsilons[e]);
      fit_y.push_back(total);
    }
  }
  r.metadata["slope"] = positive ? loglog_slope(fit_x, fit_y)
                                 : std::numeric_limits<double>::quiet_NaN();
  r.metadata["all_positive"] = positive;
  double jmax = 0.0;
  for (double j : erf_part) jmax = std::max(jmax, std::abs(j));
  r.metadata["max_abs_J_eps"] = jmax;
  r.metadata["triangles"] = mesh.triangle_count();
  r.metadata["alpha"] = alpha;
  r.metadata["final_time"] = final_time;
  r.metadata["quadrature_level"] = options.level;
  return r;
}

/// Compares the b matrix with H1 time weights against the one whose history
/// blocks integrate dG/ds in time by quadrature.
inline StudyResult b_consistency_check(const SurfaceMesh& mesh,
                                       const TimePartition& partition,
                                       const KernelParams& params,
                                       const AssemblyOptions& options = {}) {
  const SpaceDescriptor space =
      make_space(mesh, partition, SpatialBasis::p1_vertex);
  const auto closed = assemble_b_matrix(space, params, options);
  const auto history = assemble_b_matrix_history(space, params, options);
  const auto diff = combine(1.0, history, -1.0, closed);
  StudyResult r;
  r.name = "b_consistency";
  r.columns = {"k", "l", "norm_closed_form", "norm_history", "relative_difference"};
  double diag = 0.0, hist = 0.0;
  for (std::size_t i = 0; i < closed.stored_block_count(); ++i) {
    const auto [k, l] = closed.stored_position(i);
    const double nc = closed.stored(i).norm();
    const double rel = nc > 0 ? diff.stored(i).norm() / nc : diff.stored(i).norm();
    r.rows.push_back({static_cast<double>(k), static_cast<double>(l), nc,
                      history.stored(i).norm(), rel});
    (k == l ? diag : hist) = std::max(k == l ? diag : hist, rel);
  }
  r.metadata["frobenius_relative_difference"] =
      diff.frobenius_norm() / closed.frobenius_norm();
  r.metadata["max_diagonal_relative_difference"] = diag;
  r.metadata["max_history_relative_difference"] = hist;
  r.metadata["triangles"] = mesh.triangle_count();
  r.metadata["time_steps"] = partition.intervals();
  r.metadata["alpha"] = params.alpha();
  r.metadata["quadrature_level"] = options.level;
  r.metadata["history_level"] = options.history_level;
  return r;
}

/// Compares max |u_h| over interior probes against the sampled sup of the
/// Dirichlet datum on the lateral boundary.
inline StudyResult max_principle_check(const SolveReport& report,
                                       const std::vector<SpaceTimePoint>& probes,
                                       const BoundaryDatum& g,
                                       double tolerance = 0.05,
                                       int time_samples = 200) {
  require(report.kind == DatumKind::dirichlet, ErrorKind::invalid_argument,
          "the maximum principle check needs a Dirichlet solve");
  const SurfaceMesh& mesh = *report.density.space.mesh;
  const double final_time = report.density.space.partition->final_time();
  double g_sup = 0.0;
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    std::vector<Vec3> pts{mesh.centroid(t)};
    for (int i = 0; i < 3; ++i) {
      pts.push_back(mesh.corner(t, i));
      pts.push_back(0.5 * (mesh.corner(t, i) + mesh.corner(t, (i + 1) % 3)));
    }
    for (const Vec3& x : pts)
      for (int s = 1; s <= time_samples; ++s)
        g_sup = std::max(g_sup, std::abs(g.evaluator(x, mesh.normal(t),
                                                     final_time * s /
                                                         time_samples)));
  }
  const auto values = evaluate_solution_interior(report, probes);
  StudyResult r;
  r.name = "max_principle";
  r.columns = {"x", "y", "z", "t", "u"};
  double u_max = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    r.rows.push_back({probes[i].x[0], probes[i].x[1], probes[i].x[2],
                      probes[i].t, values[i]});
    u_max = std::max(u_max, std::abs(values[i]));
  }
  r.metadata["max_abs_u"] = u_max;
  r.metadata["boundary_sup"] = g_sup;
  r.metadata["tolerance"] = tolerance;
  r.metadata["violated"] = u_max > (1.0 + tolerance) * g_sup + 1e-10;
  return r;
}

/// u*(x, t) = G(x - source, t) with the source outside the domain.
struct ManufacturedSolution {
  Vec3 source{2.5, 0.5, 0.5};
  KernelParams params{1.0};

  double value(const Vec3& x, double t) const {
    return t <= 0.0 ? 0.0 : heat_kernel(x - source, t, params).value;
  }
  double normal_derivative(const Vec3& x, const Vec3& n, double t) const {
    return t <= 0.0 ? 0.0 : n.dot(heat_kernel_gradient(x - source, t, params));
  }
  BoundaryDatum datum(DatumKind kind) const {
    BoundaryDatum d;
    d.kind = kind;
    if (kind == DatumKind::dirichlet)
      d.evaluator = [*this](const Vec3& x, const Vec3&, double t) {
        return value(x, t);
      };
    else
      d.evaluator = [*this](const Vec3& x, const Vec3& n, double t) {
        return normal_derivative(x, n, t);
      };
    return d;
  }
};

struct ConvergenceOptions {
  int levels = 3;
  int base_subdivisions = 1;
  int base_steps = 4;
  double final_time = 1.0;
  ManufacturedSolution solution{};
  AssemblyOptions assembly{};
};

/// Interior probes of the unit cube at t = T/2, 3T/4 and T.
inline std::vector<SpaceTimePoint> default_probes(double final_time) {
  std::vector<SpaceTimePoint> probes;
  for (double f : {0.5, 0.75, 1.0})
    for (const Vec3& x :
         {Vec3(0.5, 0.5, 0.5), Vec3(0.3, 0.5, 0.5), Vec3(0.7, 0.5, 0.5),
          Vec3(0.5, 0.3, 0.3), Vec3(0.5, 0.7, 0.7), Vec3(0.3, 0.3, 0.7),
          Vec3(0.7, 0.7, 0.3)})
      probes.push_back({x, f * final_time});
  return probes;
}

/// Solves the manufactured problem on the unit cube at successive levels
/// (4x triangles, 2x time steps) and records the max relative probe error.
inline StudyResult convergence_study(DatumKind problem,
                                     const ConvergenceOptions& options = {},
                                     SolveReport* finest = nullptr) {
  require(options.levels >= 1, ErrorKind::invalid_argument,
          "levels must be at least 1");
  require(options.base_subdivisions >= 1 && options.base_steps >= 1,
          ErrorKind::invalid_argument, "base mesh and steps must be positive");
  const auto& sol = options.solution;
  const auto datum = sol.datum(problem);
  const auto probes = default_probes(options.final_time);
  double scale = 0.0;
  for (const auto& p : probes) scale = std::max(scale, std::abs(sol.value(p.x, p.t)));

  StudyResult r;
  r.name = std::string("convergence_") + to_string(problem);
  r.columns = {"level", "triangles", "time_steps", "dofs", "error", "ratio"};
  std::vector<double> errors, ratios, seconds;
  for (int level = 0; level < options.levels; ++level) {
    const SurfaceMesh mesh =
        generate_cube_mesh(options.base_subdivisions << level);
    const TimePartition partition =
        make_time_partition(options.final_time, options.base_steps << level);
    SolveReport report =
        problem == DatumKind::dirichlet
            ? solve_dirichlet(mesh, partition, datum, sol.params, options.assembly)
            : solve_neumann(mesh, partition, datum, sol.params, options.assembly);
    const auto values = evaluate_solution_interior(report, probes);
    double err = 0.0;
    for (std::size_t i = 0; i < probes.size(); ++i)
      err = std::max(err, std::abs(values[i] - sol.value(probes[i].x, probes[i].t)));
    err /= scale;
    const double ratio = errors.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : errors.back() / err;
    if (!errors.empty()) ratios.push_back(ratio);
    errors.push_back(err);
    r.rows.push_back({static_cast<double>(level),
                      static_cast<double>(mesh.triangle_count()),
                      static_cast<double>(partition.intervals()),
                      static_cast<double>(report.density.space.dof_count()), err,
                      ratio});
    seconds.push_back(report.wall_seconds);
    if (finest && level + 1 == options.levels) *finest = std::move(report);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < errors.size(); ++i)
    decreasing = decreasing && errors[i] < errors[i - 1];
  r.metadata["errors"] = errors;
  r.metadata["ratios"] = ratios;
  r.metadata["solve_seconds"] = seconds;
  r.metadata["strictly_decreasing"] = decreasing;
  r.metadata["min_ratio"] =
      ratios.empty() ? 0.0 : *std::min_element(ratios.begin(), ratios.end());
  r.metadata["source"] = {sol.source[0], sol.source[1], sol.source[2]};
  r.metadata["alpha"] = sol.params.alpha();
  r.metadata["final_time"] = options.final_time;
  r.metadata["quadrature_level"] = options.assembly.level;
  return r;
}

}  // namespace stbem
