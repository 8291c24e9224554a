#include "test_util.hpp"
#include "stbem/solver.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace stbem;
using stbem::testing::error_kind;

namespace {

BlockLowerTriangularMatrix random_causal(std::size_t nt, std::size_t n,
                                         bool toeplitz, unsigned seed) {
  BlockLowerTriangularMatrix m(nt, n, toeplitz);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 0; i < m.stored_block_count(); ++i) {
    auto& b = m.stored(i);
    for (Eigen::Index r = 0; r < b.rows(); ++r)
      for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = unit(rng);
    if (m.stored_position(i).first == m.stored_position(i).second &&
        (toeplitz ? i == 0 : true))
      b += 4.0 * Eigen::MatrixXd::Identity(b.rows(), b.cols());
  }
  return m;
}

Eigen::VectorXd random_vector(Eigen::Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = normal(rng);
  return x;
}

BoundaryDatum constant_datum(double value, DatumKind kind) {
  return {[value](const Vec3&, const Vec3&, double) { return value; }, kind};
}

const KernelParams unit_alpha{1.0};

}  // namespace

TEST(BlockForwardSolve, MatchesDenseSolve) {
  for (bool toeplitz : {false, true}) {
    const auto a = random_causal(5, 4, toeplitz, 11);
    const Eigen::VectorXd rhs = random_vector(20, 12);
    BlockSolveStats stats;
    const Eigen::VectorXd x = block_forward_solve(a, rhs, &stats);
    const Eigen::VectorXd expect = a.dense().partialPivLu().solve(rhs);
    EXPECT_LT((x - expect).norm(), 1e-12 * expect.norm());
    EXPECT_EQ(stats.factorizations, toeplitz ? 1u : 5u);
    ASSERT_EQ(stats.residuals.size(), 5u);
    for (double r : stats.residuals) EXPECT_LT(r, 1e-13);
    for (double r : stats.rcond) EXPECT_GT(r, 0.0);
  }
}

TEST(BlockForwardSolve, TruncatedSolveReproducesPrefixBitwise) {
  const auto a = random_causal(6, 3, false, 4);
  const Eigen::VectorXd rhs = random_vector(18, 5);
  const Eigen::VectorXd full = block_forward_solve(a, rhs);
  for (std::size_t k = 1; k <= 6; ++k) {
    const auto n = static_cast<Eigen::Index>(3 * k);
    const Eigen::VectorXd part = block_forward_solve(a.truncated(k), rhs.head(n));
    EXPECT_EQ(part, full.head(n)) << "k = " << k;
  }
}

TEST(BlockForwardSolve, Errors) {
  auto a = random_causal(3, 2, false, 1);
  EXPECT_EQ(error_kind([&] { block_forward_solve(a, Eigen::VectorXd::Zero(5)); }),
            ErrorKind::dimension_mismatch);
  a.block(1, 1).setZero();
  EXPECT_EQ(error_kind([&] { block_forward_solve(a, Eigen::VectorXd::Ones(6)); }),
            ErrorKind::singular_block);
}

TEST(Projection, ConstantDatum) {
  const auto space = make_space(generate_cube_mesh(1), make_time_partition(2.0, 4),
                                SpatialBasis::p0_triangle);
  const Eigen::VectorXd p0 = project_p0(space, constant_datum(3.0, DatumKind::dirichlet), 2);
  for (Eigen::Index i = 0; i < p0.size(); ++i) EXPECT_NEAR(p0[i], 3.0 * 0.5 * 0.5, 1e-14);
  const auto p1space = make_space(generate_cube_mesh(1), make_time_partition(2.0, 4),
                                  SpatialBasis::p1_vertex);
  const Eigen::VectorXd p1 = project_p1(p1space, constant_datum(1.0, DatumKind::neumann), 2);
  EXPECT_NEAR(p1.sum(), 6.0 * 2.0, 1e-12);
}

TEST(Projection, LinearInTimeIsExact) {
  const auto space = make_space(generate_cube_mesh(1), make_time_partition(1.0, 2),
                                SpatialBasis::p0_triangle);
  const BoundaryDatum g{[](const Vec3& x, const Vec3&, double t) { return x[0] * t; },
                        DatumKind::dirichlet};
  const Eigen::VectorXd p = project_p0(space, g, 1);
  // Triangle 0 lies on a face; its x-moment times int_{I_1} t dt.
  const SurfaceMesh& mesh = *space.mesh;
  const double expect = mesh.area(0) * mesh.centroid(0)[0] * (0.5 - 0.125);
  EXPECT_NEAR(p[12], expect, 1e-14);
}

TEST(Projection, NonFiniteDatumIsANumericError) {
  const auto space = make_space(generate_cube_mesh(1), make_time_partition(1.0, 2),
                                SpatialBasis::p0_triangle);
  const auto bad = constant_datum(std::nan(""), DatumKind::dirichlet);
  EXPECT_EQ(error_kind([&] { project_p0(space, bad, 1); }), ErrorKind::numeric);
}

TEST(Solve, ZeroDataGiveZeroDensities) {
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(1.0, 2);
  const auto d = solve_dirichlet(mesh, p, constant_datum(0.0, DatumKind::dirichlet), unit_alpha);
  EXPECT_EQ(d.density.coefficients.norm(), 0.0);
  const auto n = solve_neumann(mesh, p, constant_datum(0.0, DatumKind::neumann), unit_alpha);
  EXPECT_EQ(n.density.coefficients.norm(), 0.0);
}

TEST(Solve, KindMismatchIsRejected) {
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(1.0, 2);
  EXPECT_EQ(error_kind([&] {
              solve_dirichlet(mesh, p, constant_datum(1.0, DatumKind::neumann), unit_alpha);
            }),
            ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind([&] {
              solve_neumann(mesh, p, constant_datum(1.0, DatumKind::dirichlet), unit_alpha);
            }),
            ErrorKind::invalid_argument);
}

TEST(Solve, FlagsNonzeroInitialTrace) {
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(1.0, 2);
  const auto r = solve_dirichlet(mesh, p, constant_datum(1.0, DatumKind::dirichlet), unit_alpha);
  EXPECT_TRUE(r.initial_trace_nonzero);
  const BoundaryDatum g{[](const Vec3&, const Vec3&, double t) { return t; },
                        DatumKind::dirichlet};
  EXPECT_FALSE(solve_dirichlet(mesh, p, g, unit_alpha).initial_trace_nonzero);
}

TEST(Solve, NeumannConstantFluxMatchesVolumeGrowth) {
  // Unit normal derivative: the mean over the cube is 6 t and the centre lags
  // behind it.
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(0.5, 4);
  const auto r = solve_neumann(mesh, p, constant_datum(1.0, DatumKind::neumann), unit_alpha);
  const double u = evaluate_solution_interior(r, {{Vec3(0.5, 0.5, 0.5), 0.5}})[0];
  EXPECT_GT(u, 0.0);
  EXPECT_LT(u, 6.0 * 0.5);
}

TEST(Solve, DirichletResidualsAreSmall) {
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(1.0, 3);
  const BoundaryDatum g{[](const Vec3& x, const Vec3&, double t) { return t * x[2]; },
                        DatumKind::dirichlet};
  const auto r = solve_dirichlet(mesh, p, g, unit_alpha);
  ASSERT_EQ(r.stats.residuals.size(), 3u);
  for (double res : r.stats.residuals) EXPECT_LT(res, 1e-12);
  EXPECT_EQ(r.stats.factorizations, 1u);
  EXPECT_GT(r.wall_seconds, 0.0);
}

TEST(Solve, ThreadCountDoesNotChangeResults) {
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(1.0, 2);
  const BoundaryDatum g{[](const Vec3& x, const Vec3&, double t) { return t + x[0]; },
                        DatumKind::dirichlet};
  set_worker_count(1);
  const auto a = solve_dirichlet(mesh, p, g, unit_alpha);
  set_worker_count(3);
  const auto b = solve_dirichlet(mesh, p, g, unit_alpha);
  set_worker_count(0);
  EXPECT_EQ(a.density.coefficients, b.density.coefficients);
}

TEST(Evaluate, ReportsFailingPoint) {
  const SurfaceMesh mesh = generate_cube_mesh(1);
  const TimePartition p = make_time_partition(1.0, 2);
  const auto r = solve_dirichlet(mesh, p, constant_datum(1.0, DatumKind::dirichlet), unit_alpha);
  try {
    evaluate_solution_interior(r, {{Vec3(0.5, 0.5, 0.5), 0.5}, {Vec3(2.0, 0.5, 0.5), 0.5}});
    FAIL() << "expected a domain error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain_error);
    EXPECT_NE(std::string(e.what()).find("point 1: "), std::string::npos);
  }
}

TEST(Output, CsvHeadersAndPrecision) {
  const auto space = make_space(generate_cube_mesh(1), make_time_partition(1.0, 1),
                                SpatialBasis::p0_triangle);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(12);
  c[3] = 1.0 / 3.0;
  std::ostringstream out;
  write_density_csv(out, make_density(space, c));
  EXPECT_EQ(out.str().substr(0, 12), "k,dof,value\n");
  EXPECT_NE(out.str().find("0,3,0.33333333333333331"), std::string::npos);
  std::ostringstream ev;
  write_evaluations_csv(ev, {{Vec3(0.5, 0.5, 0.5), 1.0}}, {2.0});
  EXPECT_EQ(ev.str(), "x,y,z,t,u\n0.5,0.5,0.5,1,2\n");
  EXPECT_EQ(error_kind([&] { write_evaluations_csv(ev, {}, {1.0}); }),
            ErrorKind::dimension_mismatch);
}
