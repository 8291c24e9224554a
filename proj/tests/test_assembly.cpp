#include "oracles.hpp"
#include "test_util.hpp"
#include "stbem/assembly.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

using namespace stbem;
using stbem::testing::error_kind;

namespace {

// int_{I_k} int_{I_l, tau < t} G(rho, t - tau) dtau dt by nested quadrature.
double v_weight_oracle(double rho, std::size_t k, std::size_t l,
                       const TimePartition& p, double alpha) {
  if (l > k) return 0.0;
  return oracle::integrate([&](double t) {
    const double hi = std::min(p.at(l + 1), t);
    if (hi <= p.at(l)) return 0.0;
    return oracle::integrate(
        [&](double tau) { return oracle::heat_kernel(rho, t - tau, alpha); },
        p.at(l), hi, 1e-13);
  }, p.at(k), p.at(k + 1), 1e-12);
}

// int_{I_l} G(rho, t_{k+1} - tau) - G(rho, t_k - tau) dtau.
double b_weight_oracle(double rho, std::size_t k, std::size_t l,
                       const TimePartition& p, double alpha) {
  if (l > k) return 0.0;
  return oracle::integrate([&](double tau) {
    return oracle::heat_kernel(rho, p.at(k + 1) - tau, alpha) -
           oracle::heat_kernel(rho, p.at(k) - tau, alpha);
  }, p.at(l), p.at(l + 1), 1e-13);
}

double relative_difference(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

SpaceDescriptor cube_space(int n, int steps, SpatialBasis basis,
                           double final_time = 1.0) {
  return make_space(generate_cube_mesh(n), make_time_partition(final_time, steps),
                    basis);
}

const KernelParams unit_alpha{1.0};

}  // namespace

TEST(TimeWeights, VMatchesNestedQuadrature) {
  const TimePartition p = make_time_partition(1.0, 4, PowerGrading{1.5});
  for (double alpha : {0.5, 2.0})
    for (double rho : {0.05, 0.4, 1.5})
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t l = 0; l <= k; ++l) {
          const double expect = v_weight_oracle(rho, k, l, p, alpha);
          EXPECT_NEAR(time_weight_V(rho, k, l, p, KernelParams(alpha)), expect,
                      1e-8 * std::abs(expect) + 1e-15)
              << "rho " << rho << " k " << k << " l " << l;
        }
}

TEST(TimeWeights, BMatchesNestedQuadrature) {
  const TimePartition p = make_time_partition(1.0, 4, PowerGrading{1.5});
  for (double alpha : {0.5, 2.0})
    for (double rho : {0.05, 0.4, 1.5})
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t l = 0; l <= k; ++l) {
          const double expect = b_weight_oracle(rho, k, l, p, alpha);
          EXPECT_NEAR(time_weight_b(rho, k, l, p, KernelParams(alpha)), expect,
                      1e-8 * std::abs(expect) + 1e-15)
              << "rho " << rho << " k " << k << " l " << l;
        }
}

TEST(TimeWeights, UpperBlocksAreZero) {
  const TimePartition p = make_time_partition(1.0, 3);
  EXPECT_EQ(time_weight_V(0.3, 0, 1, p, unit_alpha), 0.0);
  EXPECT_EQ(time_weight_b(0.3, 1, 2, p, unit_alpha), 0.0);
}

TEST(TimeWeights, UniformGridDependsOnLagOnly) {
  const TimePartition p = make_time_partition(2.0, 5);
  for (std::size_t d = 0; d < 3; ++d)
    EXPECT_NEAR(time_weight_V(0.2, d + 2, 2, p, unit_alpha),
                time_weight_V(0.2, d, 0, p, unit_alpha),
                1e-14 * time_weight_V(0.2, d, 0, p, unit_alpha));
}

TEST(TimeWeights, Errors) {
  const TimePartition p = make_time_partition(1.0, 3);
  EXPECT_EQ(error_kind([&] { time_weight_V(0.0, 0, 0, p, unit_alpha); }),
            ErrorKind::invalid_argument);
  EXPECT_EQ(error_kind([&] { time_weight_b(0.1, 3, 0, p, unit_alpha); }),
            ErrorKind::invalid_argument);
}

TEST(BlockMatrix, StorageLayout) {
  BlockLowerTriangularMatrix full(4, 2, false), toe(4, 2, true);
  EXPECT_EQ(full.stored_block_count(), 10u);
  EXPECT_EQ(toe.stored_block_count(), 4u);
  EXPECT_EQ(full.storage_index(3, 1), 7u);
  EXPECT_EQ(toe.storage_index(3, 1), 2u);
  EXPECT_EQ(error_kind([&] { full.storage_index(1, 2); }),
            ErrorKind::invalid_argument);
  for (std::size_t i = 0; i < full.stored_block_count(); ++i) {
    const auto [k, l] = full.stored_position(i);
    EXPECT_EQ(full.storage_index(k, l), i);
  }
}

namespace {

BlockLowerTriangularMatrix random_matrix(std::size_t nt, std::size_t n,
                                         bool toeplitz, unsigned seed) {
  BlockLowerTriangularMatrix m(nt, n, toeplitz);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < m.stored_block_count(); ++i)
    for (Eigen::Index r = 0; r < m.stored(i).rows(); ++r)
      for (Eigen::Index c = 0; c < m.stored(i).cols(); ++c)
        m.stored(i)(r, c) = normal(rng);
  return m;
}

}  // namespace

TEST(BlockMatrix, MultiplyMatchesDense) {
  for (bool toeplitz : {false, true}) {
    const auto m = random_matrix(4, 3, toeplitz, 5);
    Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(12, -1.0, 2.0);
    EXPECT_LT((m.multiply(x) - m.dense() * x).norm(), 1e-13 * x.norm());
    const Eigen::MatrixXd d = m.dense();
    for (Eigen::Index r = 0; r < 12; ++r)
      for (Eigen::Index c = 0; c < 12; ++c)
        if (c / 3 > r / 3) EXPECT_EQ(d(r, c), 0.0);
    EXPECT_NEAR(m.frobenius_norm(), d.norm(), 1e-13 * d.norm());
  }
}

TEST(BlockMatrix, BinaryRoundTripIsExact) {
  for (bool toeplitz : {false, true}) {
    const auto m = random_matrix(3, 4, toeplitz, 9);
    std::stringstream buf;
    m.write_binary(buf);
    const auto back = BlockLowerTriangularMatrix::read_binary(buf);
    EXPECT_EQ(back.toeplitz(), toeplitz);
    EXPECT_EQ(back.dense(), m.dense());
  }
}

TEST(BlockMatrix, BinaryHeaderAndErrors) {
  const auto m = random_matrix(3, 2, false, 1);
  std::stringstream buf;
  m.write_binary(buf);
  const std::string bytes = buf.str();
  std::int64_t header[4];
  std::memcpy(header, bytes.data(), sizeof(header));
  EXPECT_EQ(header[0], 3);
  EXPECT_EQ(header[1], 2);
  EXPECT_EQ(header[2], 2);
  EXPECT_EQ(header[3], 6);
  EXPECT_EQ(bytes.size(), sizeof(header) + 6 * 4 * sizeof(double));
  // Row-major payload of block (0, 0).
  double first[4];
  std::memcpy(first, bytes.data() + sizeof(header), sizeof(first));
  EXPECT_EQ(first[1], m.block(0, 0)(0, 1));
  std::stringstream cut(bytes.substr(0, bytes.size() - 8));
  EXPECT_EQ(error_kind([&] { BlockLowerTriangularMatrix::read_binary(cut); }),
            ErrorKind::parse_error);
  std::stringstream empty;
  EXPECT_EQ(error_kind([&] { BlockLowerTriangularMatrix::read_binary(empty); }),
            ErrorKind::parse_error);
}

TEST(BlockMatrix, CsvListsEveryStoredEntry) {
  const auto m = random_matrix(2, 2, false, 3);
  std::stringstream out;
  m.write_csv(out);
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(line, "k,l,row,col,value");
  int rows = 0;
  while (std::getline(out, line)) ++rows;
  EXPECT_EQ(rows, 3 * 4);
}

TEST(BlockMatrix, TruncationAndCombine) {
  const auto a = random_matrix(4, 2, false, 2), b = random_matrix(4, 2, false, 4);
  const auto t = a.truncated(2);
  EXPECT_EQ(t.dense(), a.dense().topLeftCorner(4, 4));
  const auto c = combine(2.0, a, -1.0, b);
  EXPECT_LT((c.dense() - (2.0 * a.dense() - b.dense())).norm(), 1e-14 * c.dense().norm());
  EXPECT_EQ(error_kind([&] { combine(1.0, a, 1.0, random_matrix(4, 2, true, 1)); }),
            ErrorKind::dimension_mismatch);
  EXPECT_EQ(error_kind([&] { a.truncated(5); }), ErrorKind::invalid_argument);
}

TEST(Space, DofLayoutAndDensity) {
  const auto space = cube_space(1, 3, SpatialBasis::p1_vertex);
  EXPECT_EQ(space.spatial_dofs(), 8u);
  EXPECT_EQ(space.dof_count(), 24u);
  Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(24, 0.0, 23.0);
  const auto d = make_density(space, c);
  EXPECT_EQ(d.at(2, 5), 21.0);
  EXPECT_EQ(error_kind([&] { make_density(space, Eigen::VectorXd(5)); }),
            ErrorKind::dimension_mismatch);
}

TEST(AssembleV, DisjointEntriesMatchNestedQuadrature) {
  const auto space = cube_space(2, 2, SpatialBasis::p0_triangle);
  const SurfaceMesh& mesh = *space.mesh;
  const auto v = assemble_V(space, unit_alpha);
  // Nearest and farthest disjoint partners of triangle 0.
  std::size_t near = 0, far = 0;
  double dn = INFINITY, df = 0.0;
  for (std::size_t b = 1; b < mesh.triangle_count(); ++b) {
    if (classify_pair(mesh.triangle(0), mesh.triangle(b)).kind !=
        AdjacencyKind::disjoint)
      continue;
    const double d = (mesh.centroid(b) - mesh.centroid(0)).norm();
    if (d < dn) dn = d, near = b;
    if (d > df) df = d, far = b;
  }
  const TimePartition& p = *space.partition;
  for (std::size_t b : {near, far})
    for (auto [k, l] : {std::pair<std::size_t, std::size_t>{0, 0}, {1, 0}}) {
      const double expect = oracle::integrate_triangle([&](const Vec3& x) {
        return oracle::integrate_triangle([&](const Vec3& y) {
          return time_weight_V((x - y).norm(), k, l, p, unit_alpha);
        }, triangle_points(mesh, b), 1e-11, 5);
      }, triangle_points(mesh, 0), 1e-11, 5);
      EXPECT_NEAR(v.block(k, l)(0, static_cast<Eigen::Index>(b)), expect,
                  1e-6 * expect)
          << "pair (0, " << b << ") block " << k << "," << l;
    }
}

TEST(AssembleV, BlocksAreSymmetric) {
  const auto v = assemble_V(cube_space(1, 3, SpatialBasis::p0_triangle), unit_alpha);
  for (std::size_t i = 0; i < v.stored_block_count(); ++i) {
    const Eigen::MatrixXd& b = v.stored(i);
    EXPECT_LE((b - b.transpose()).norm(), 1e-14 * b.norm());
  }
}

TEST(AssembleV, ToeplitzMatchesFullStorage) {
  const auto space = cube_space(1, 4, SpatialBasis::p0_triangle);
  AssemblyOptions full;
  full.toeplitz = false;
  const auto a = assemble_V(space, unit_alpha);
  const auto b = assemble_V(space, unit_alpha, full);
  EXPECT_TRUE(a.toeplitz());
  EXPECT_FALSE(b.toeplitz());
  EXPECT_EQ(a.stored_block_count(), 4u);
  EXPECT_LT(relative_difference(a.dense(), b.dense()), 1e-13);
}

TEST(AssembleV, GradedPartitionUsesFullStorage) {
  const auto space = make_space(generate_cube_mesh(1),
                                make_time_partition(1.0, 3, PowerGrading{2.0}),
                                SpatialBasis::p0_triangle);
  EXPECT_FALSE(assemble_V(space, unit_alpha).toeplitz());
}

TEST(AssembleV, PositiveOnRandomVectors) {
  const auto v = assemble_V(cube_space(1, 4, SpatialBasis::p0_triangle), unit_alpha);
  const Eigen::MatrixXd d = v.dense();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x(d.rows());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
    EXPECT_GT(x.dot(d * x), 0.0);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v.block(0, 0));
  const double cond = svd.singularValues()(0) /
                      svd.singularValues()(svd.singularValues().size() - 1);
  EXPECT_TRUE(std::isfinite(cond));
}

TEST(AssembleV, RejectsWrongBasis) {
  EXPECT_EQ(error_kind([] {
              assemble_V(cube_space(1, 2, SpatialBasis::p1_vertex), unit_alpha);
            }),
            ErrorKind::invalid_argument);
}

TEST(AssembleD, DecompositionIsExact) {
  const auto space = cube_space(1, 3, SpatialBasis::p1_vertex);
  const KernelParams params(2.0);
  const auto parts = assemble_D_parts(space, params);
  const auto d = assemble_D(space, params);
  const auto expect = combine(4.0, parts.curl, 2.0, parts.b);
  EXPECT_LE(relative_difference(d.dense(), expect.dense()), 1e-12);
}

TEST(AssembleD, CurlPartAnnihilatesConstants) {
  const auto space = cube_space(1, 3, SpatialBasis::p1_vertex);
  const auto parts = assemble_D_parts(space, unit_alpha);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(space.dof_count()));
  EXPECT_LE(parts.curl.multiply(ones).norm(), 1e-12 * parts.curl.frobenius_norm());
  EXPECT_GT(parts.b.multiply(ones).norm(), 1e-3 * parts.b.frobenius_norm());
}

TEST(AssembleD, BlocksAreSymmetric) {
  const auto d = assemble_D(cube_space(1, 2, SpatialBasis::p1_vertex), unit_alpha);
  for (std::size_t i = 0; i < d.stored_block_count(); ++i) {
    const Eigen::MatrixXd& b = d.stored(i);
    EXPECT_LE((b - b.transpose()).norm(), 1e-13 * b.norm());
  }
}

TEST(AssembleB, HistoryPathMatchesClosedForm) {
  const auto space = cube_space(1, 4, SpatialBasis::p1_vertex);
  AssemblyOptions options;
  options.level = 4;
  const auto closed = assemble_b_matrix(space, unit_alpha, options);
  const auto history = assemble_b_matrix_history(space, unit_alpha, options);
  const auto diff = combine(1.0, history, -1.0, closed);
  EXPECT_LT(diff.frobenius_norm() / closed.frobenius_norm(), 1e-6);
  EXPECT_LE(diff.block(0, 0).norm(), 1e-12 * closed.block(0, 0).norm());
}

TEST(AssembleB, HistoryPathOnGradedPartition) {
  const auto space = make_space(generate_cube_mesh(1),
                                make_time_partition(1.0, 3, PowerGrading{1.5}),
                                SpatialBasis::p1_vertex);
  const auto closed = assemble_b_matrix(space, unit_alpha);
  const auto history = assemble_b_matrix_history(space, unit_alpha);
  EXPECT_LT(relative_difference(history.dense(), closed.dense()), 1e-6);
}

TEST(Causality, UpperBlocksVanishAndPrefixesDoNotSeeTheFuture) {
  const auto small = cube_space(1, 2, SpatialBasis::p0_triangle);
  const auto large = cube_space(1, 4, SpatialBasis::p0_triangle, 2.0);
  AssemblyOptions full;
  full.toeplitz = false;
  const auto a = assemble_V(small, unit_alpha, full);
  const auto b = assemble_V(large, unit_alpha, full);
  const Eigen::MatrixXd db = b.dense();
  const Eigen::Index n = static_cast<Eigen::Index>(small.spatial_dofs());
  EXPECT_EQ(db.topRightCorner(n, 3 * n).norm(), 0.0);
  EXPECT_EQ(b.truncated(2).dense(), a.dense());
}

TEST(Potentials, SingleLayerMatchesNestedQuadrature) {
  const auto space = cube_space(1, 2, SpatialBasis::p0_triangle);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(24);
  c[0] = 1.0;
  const auto density = make_density(space, c);
  const Vec3 x(0.5, 0.4, 0.3);
  const TrianglePoints tri = triangle_points(*space.mesh, 0);
  for (double t : {0.3, 0.75}) {
    const double expect = oracle::integrate_triangle([&](const Vec3& y) {
      const double rho = (x - y).norm();
      return oracle::integrate(
          [&](double tau) { return oracle::heat_kernel(rho, t - tau, 1.0); },
          0.0, std::min(0.5, t), 1e-13);
    }, tri, 1e-11, 6);
    EXPECT_NEAR(evaluate_single_layer(density, x, t, unit_alpha), expect,
                1e-8 * expect);
  }
}

TEST(Potentials, DoubleLayerOfOneIsVolumeHeatMinusOne) {
  const auto space = cube_space(1, 2, SpatialBasis::p1_vertex);
  const auto density = make_density(
      space, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(space.dof_count())));
  auto box = [](const Vec3& x, double t) {
    double prod = 1.0;
    const double c = 2.0 * std::sqrt(t);
    for (int i = 0; i < 3; ++i)
      prod *= 0.5 * (std::erf((1.0 - x[i]) / c) + std::erf(x[i] / c));
    return prod;
  };
  for (const Vec3& x : {Vec3(0.5, 0.5, 0.5), Vec3(0.2, 0.7, 0.45)})
    for (double t : {0.1, 0.4, 1.0})
      EXPECT_NEAR(evaluate_double_layer(density, x, t, unit_alpha),
                  box(x, t) - 1.0, 1e-7)
          << "t = " << t;
}

TEST(Potentials, Linearity) {
  const auto space = cube_space(1, 2, SpatialBasis::p0_triangle);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Eigen::VectorXd a(24), b(24);
  for (int i = 0; i < 24; ++i) a[i] = normal(rng), b[i] = normal(rng);
  const Vec3 x(0.4, 0.5, 0.6);
  const double ua = evaluate_single_layer(make_density(space, a), x, 0.8, unit_alpha);
  const double ub = evaluate_single_layer(make_density(space, b), x, 0.8, unit_alpha);
  const double uab =
      evaluate_single_layer(make_density(space, 2.0 * a - 3.0 * b), x, 0.8, unit_alpha);
  EXPECT_NEAR(uab, 2.0 * ua - 3.0 * ub, 1e-8 * (std::abs(ua) + std::abs(ub)));
}

TEST(Potentials, DomainErrors) {
  const auto space = cube_space(1, 2, SpatialBasis::p0_triangle);
  const auto density = make_density(space, Eigen::VectorXd::Ones(24));
  const Vec3 inside(0.5, 0.5, 0.5);
  EXPECT_EQ(error_kind([&] { evaluate_single_layer(density, Vec3(0.5, 0.5, 0.0), 0.5, unit_alpha); }),
            ErrorKind::domain_error);
  EXPECT_EQ(error_kind([&] { evaluate_single_layer(density, Vec3(1.5, 0.5, 0.5), 0.5, unit_alpha); }),
            ErrorKind::domain_error);
  EXPECT_EQ(error_kind([&] { evaluate_single_layer(density, inside, 0.0, unit_alpha); }),
            ErrorKind::domain_error);
  EXPECT_EQ(error_kind([&] { evaluate_single_layer(density, inside, 1.5, unit_alpha); }),
            ErrorKind::domain_error);
  EXPECT_EQ(error_kind([&] { evaluate_double_layer(density, inside, 0.5, unit_alpha); }),
            ErrorKind::invalid_argument);
}
