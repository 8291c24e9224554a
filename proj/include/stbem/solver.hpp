#pragma once

#include "stbem/assembly.hpp"
#include "stbem/core.hpp"
#include "stbem/geometry.hpp"
#include "stbem/kernels.hpp"
#include "stbem/quadrature.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

namespace stbem {

struct BlockSolveStats {
  std::vector<double> residuals;  // ||B_kk x_k - r_k|| / ||r_k|| per block
  std::vector<double> rcond;      // reciprocal condition estimate per block
  std::size_t factorizations = 0;
};

/// Forward substitution over the time blocks of a causal system.
inline Eigen::VectorXd block_forward_solve(const BlockLowerTriangularMatrix& a,
                                           const Eigen::VectorXd& rhs,
                                           BlockSolveStats* stats = nullptr) {
  require(static_cast<std::size_t>(rhs.size()) == a.rows(),
          ErrorKind::dimension_mismatch,
          "right-hand side has length " + std::to_string(rhs.size()) +
              ", matrix has " + std::to_string(a.rows()) + " rows");
  const auto n = static_cast<Eigen::Index>(a.block_size());
  const std::size_t nt = a.time_blocks();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
  BlockSolveStats local;
  BlockSolveStats& s = stats ? *stats : local;
  s = {};
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  for (std::size_t k = 0; k < nt; ++k) {
    const Eigen::MatrixXd& diag = a.block(k, k);
    if (k == 0 || !a.toeplitz()) {
      lu.compute(diag);
      ++s.factorizations;
    }
    const double rcond = lu.rcond();
    if (!(std::isfinite(rcond) && rcond > 1e-14)) {
      std::ostringstream msg;
      msg << "diagonal block " << k << " has condition estimate "
          << (rcond > 0 ? 1.0 / rcond : INFINITY);
      fail(ErrorKind::singular_block, msg.str());
    }
    Eigen::VectorXd r = rhs.segment(static_cast<Eigen::Index>(k) * n, n);
    for (std::size_t j = 0; j < k; ++j)
      r.noalias() -= a.block(k, j) * x.segment(static_cast<Eigen::Index>(j) * n, n);
    const Eigen::VectorXd xk = lu.solve(r);
    x.segment(static_cast<Eigen::Index>(k) * n, n) = xk;
    const double rn = r.norm();
    s.residuals.push_back(rn > 0 ? (diag * xk - r).norm() / rn
                                 : (diag * xk).norm());
    s.rcond.push_back(rcond);
  }
  return x;
}

enum class DatumKind { dirichlet, neumann };

inline const char* to_string(DatumKind kind) {
  return kind == DatumKind::dirichlet ? "dirichlet" : "neumann";
}

/// Boundary data as a function of a boundary point, the outward normal there
/// and time.
struct BoundaryDatum {
  std::function<double(const Vec3& x, const Vec3& normal, double t)> evaluator;
  DatumKind kind = DatumKind::dirichlet;
};

struct SolveReport {
  SpaceTimeDensity density;
  DatumKind kind = DatumKind::dirichlet;
  KernelParams params{1.0};
  BlockSolveStats stats;
  double wall_seconds = 0.0;
  // The datum did not vanish at t = 0 on the sampled points.
  bool initial_trace_nonzero = false;
};

namespace detail {

template <typename F>
void for_each_boundary_sample(const SurfaceMesh& mesh, const TimePartition& p,
                              int level, F&& visit) {
  const TriangleRule tri = triangle_rule(std::min(20, 2 + 2 * level));
  const LineRule gauss = gauss_legendre(2 + 2 * level);
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const TrianglePoints pts = triangle_points(mesh, t);
    const double area = mesh.area(t);
    for (std::size_t k = 0; k < p.intervals(); ++k) {
      const double dt = p.step(k);
      for (std::size_t q = 0; q < tri.weights.size(); ++q) {
        const auto& b = tri.points[q];
        const Vec3 y = b[0] * pts[0] + b[1] * pts[1] + b[2] * pts[2];
        for (std::size_t g = 0; g < gauss.points.size(); ++g) {
          const double time = p.at(k) + gauss.points[g] * dt;
          visit(t, k, y, b, time, area * tri.weights[q] * dt * gauss.weights[g]);
        }
      }
    }
  }
}

inline double evaluate_datum(const BoundaryDatum& datum, const Vec3& y,
                             const Vec3& n, double t) {
  const double v = datum.evaluator(y, n, t);
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "boundary datum is " << v << " at x = (" << y.transpose()
        << "), t = " << t;
    fail(ErrorKind::numeric, msg.str());
  }
  return v;
}

inline bool initial_trace_nonzero(const SurfaceMesh& mesh,
                                  const BoundaryDatum& datum) {
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t)
    if (datum.evaluator(mesh.centroid(t), mesh.normal(t), 0.0) != 0.0)
      return true;
  return false;
}

}  // namespace detail

/// <g, 1_T x 1_k> for every triangle T and interval k.
inline Eigen::VectorXd project_p0(const SpaceDescriptor& space,
                                  const BoundaryDatum& datum, int level) {
  const SurfaceMesh& mesh = *space.mesh;
  const std::size_t n = space.spatial_dofs();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.dof_count()));
  detail::for_each_boundary_sample(
      mesh, *space.partition, level,
      [&](std::size_t t, std::size_t k, const Vec3& y,
          const std::array<double, 3>&, double time, double w) {
        rhs[static_cast<Eigen::Index>(k * n + t)] +=
            w * detail::evaluate_datum(datum, y, mesh.normal(t), time);
      });
  return rhs;
}

/// <h, phi_v x 1_k> for every vertex v and interval k.
inline Eigen::VectorXd project_p1(const SpaceDescriptor& space,
                                  const BoundaryDatum& datum, int level) {
  const SurfaceMesh& mesh = *space.mesh;
  const std::size_t n = space.spatial_dofs();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.dof_count()));
  detail::for_each_boundary_sample(
      mesh, *space.partition, level,
      [&](std::size_t t, std::size_t k, const Vec3& y,
          const std::array<double, 3>& bary, double time, double w) {
        const double v =
            w * detail::evaluate_datum(datum, y, mesh.normal(t), time);
        const Triangle& tri = mesh.triangle(t);
        for (int i = 0; i < 3; ++i)
          rhs[static_cast<Eigen::Index>(k * n + tri[i])] += bary[i] * v;
      });
  return rhs;
}

/// Solves V w = g for a single layer density when V is already assembled.
inline SolveReport solve_dirichlet(const SpaceDescriptor& space,
                                   const BlockLowerTriangularMatrix& v,
                                   const BoundaryDatum& g,
                                   const KernelParams& params,
                                   const AssemblyOptions& options = {}) {
  require(g.kind == DatumKind::dirichlet, ErrorKind::invalid_argument,
          "solve_dirichlet needs a Dirichlet datum");
  const auto start = std::chrono::steady_clock::now();
  SolveReport report;
  report.kind = DatumKind::dirichlet;
  report.params = params;
  report.initial_trace_nonzero = detail::initial_trace_nonzero(*space.mesh, g);
  const Eigen::VectorXd rhs = project_p0(space, g, options.level);
  report.density = make_density(space, block_forward_solve(v, rhs, &report.stats));
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

inline SolveReport solve_dirichlet(const SurfaceMesh& mesh,
                                   const TimePartition& partition,
                                   const BoundaryDatum& g,
                                   const KernelParams& params,
                                   const AssemblyOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  const SpaceDescriptor space =
      make_space(mesh, partition, SpatialBasis::p0_triangle);
  SolveReport report =
      solve_dirichlet(space, assemble_V(space, params, options), g, params,
                      options);
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

/// Solves D v = -alpha h for a double layer density when D is assembled.
inline SolveReport solve_neumann(const SpaceDescriptor& space,
                                 const BlockLowerTriangularMatrix& d,
                                 const BoundaryDatum& h,
                                 const KernelParams& params,
                                 const AssemblyOptions& options = {}) {
  require(h.kind == DatumKind::neumann, ErrorKind::invalid_argument,
          "solve_neumann needs a Neumann datum");
  const auto start = std::chrono::steady_clock::now();
  SolveReport report;
  report.kind = DatumKind::neumann;
  report.params = params;
  report.initial_trace_nonzero = detail::initial_trace_nonzero(*space.mesh, h);
  const Eigen::VectorXd rhs = -params.alpha() * project_p1(space, h, options.level);
  report.density = make_density(space, block_forward_solve(d, rhs, &report.stats));
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

inline SolveReport solve_neumann(const SurfaceMesh& mesh,
                                 const TimePartition& partition,
                                 const BoundaryDatum& h,
                                 const KernelParams& params,
                                 const AssemblyOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  const SpaceDescriptor space =
      make_space(mesh, partition, SpatialBasis::p1_vertex);
  SolveReport report = solve_neumann(space, assemble_D(space, params, options),
                                     h, params, options);
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

struct SpaceTimePoint {
  Vec3 x;
  double t;
};

/// u = V w or u = W v at interior points, depending on the report's kind.
inline std::vector<double> evaluate_solution_interior(
    const SolveReport& report, const std::vector<SpaceTimePoint>& points,
    const PotentialOptions& options = {}) {
  std::vector<double> values(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    try {
      values[i] =
          report.kind == DatumKind::dirichlet
              ? evaluate_single_layer(report.density, points[i].x, points[i].t,
                                      report.params, options)
              : evaluate_double_layer(report.density, points[i].x, points[i].t,
                                      report.params, options);
    } catch (const Error& e) {
      std::string what = e.what();
      what = what.substr(what.find(": ") + 2);
      fail(e.kind(), "point " + std::to_string(i) + ": " + what);
    }
  }
  return values;
}

inline void write_density_csv(std::ostream& out,
                              const SpaceTimeDensity& density) {
  out << "k,dof,value\n" << std::setprecision(17);
  const std::size_t n = density.space.spatial_dofs();
  for (std::size_t k = 0; k < density.space.time_steps(); ++k)
    for (std::size_t i = 0; i < n; ++i)
      out << k << ',' << i << ',' << density.at(k, i) << '\n';
}

inline void write_evaluations_csv(std::ostream& out,
                                  const std::vector<SpaceTimePoint>& points,
                                  const std::vector<double>& values) {
  require(points.size() == values.size(), ErrorKind::dimension_mismatch,
          "points and values differ in length");
  out << "x,y,z,t,u\n" << std::setprecision(17);
  for (std::size_t i = 0; i < points.size(); ++i)
    out << points[i].x[0] << ',' << points[i].x[1] << ',' << points[i].x[2]
        << ',' << points[i].t << ',' << values[i] << '\n';
}

}  // namespace stbem
