#pragma once

#include "stbem/core.hpp"
#include "stbem/geometry.hpp"
#include "stbem/kernels.hpp"
#include "stbem/quadrature.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace stbem {

enum class SpatialBasis { p0_triangle, p1_vertex };

/// Discrete space-time space: spatial basis on a mesh times piecewise
/// constants on a time partition. Degree of freedom (k, i) sits at
/// k * spatial_dofs() + i.
struct SpaceDescriptor {
  std::shared_ptr<const SurfaceMesh> mesh;
  std::shared_ptr<const TimePartition> partition;
  SpatialBasis spatial = SpatialBasis::p0_triangle;

  std::size_t spatial_dofs() const {
    return spatial == SpatialBasis::p0_triangle ? mesh->triangle_count()
                                                : mesh->vertex_count();
  }
  std::size_t time_steps() const { return partition->intervals(); }
  std::size_t dof_count() const { return spatial_dofs() * time_steps(); }
};

inline SpaceDescriptor make_space(SurfaceMesh mesh, TimePartition partition,
                                  SpatialBasis spatial) {
  return {std::make_shared<const SurfaceMesh>(std::move(mesh)),
          std::make_shared<const TimePartition>(std::move(partition)),
          spatial};
}

struct SpaceTimeDensity {
  SpaceDescriptor space;
  Eigen::VectorXd coefficients;

  double at(std::size_t k, std::size_t dof) const {
    return coefficients[static_cast<Eigen::Index>(k * space.spatial_dofs() +
                                                  dof)];
  }
};

inline SpaceTimeDensity make_density(const SpaceDescriptor& space,
                                     Eigen::VectorXd coefficients) {
  require(static_cast<std::size_t>(coefficients.size()) == space.dof_count(),
          ErrorKind::dimension_mismatch,
          "density has " + std::to_string(coefficients.size()) +
              " coefficients, space has " +
              std::to_string(space.dof_count()));
  return {space, std::move(coefficients)};
}

/// Causal block matrix. Blocks with l > k are zero and never stored. A
/// Toeplitz matrix stores one block per lag d = k - l; otherwise block (k, l)
/// lives at k (k + 1) / 2 + l.
class BlockLowerTriangularMatrix {
 public:
  BlockLowerTriangularMatrix() = default;

  BlockLowerTriangularMatrix(std::size_t time_blocks, std::size_t block_size,
                             bool toeplitz)
      : time_blocks_(time_blocks), block_size_(block_size), toeplitz_(toeplitz) {
    require(time_blocks >= 1, ErrorKind::invalid_argument,
            "block matrix needs at least one time block");
    const std::size_t stored =
        toeplitz ? time_blocks : time_blocks * (time_blocks + 1) / 2;
    const auto n = static_cast<Eigen::Index>(block_size);
    blocks_.assign(stored, Eigen::MatrixXd::Zero(n, n));
  }

  std::size_t time_blocks() const noexcept { return time_blocks_; }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t rows() const noexcept { return time_blocks_ * block_size_; }
  bool toeplitz() const noexcept { return toeplitz_; }
  std::size_t stored_block_count() const noexcept { return blocks_.size(); }

  std::size_t storage_index(std::size_t k, std::size_t l) const {
    require(k < time_blocks_ && l <= k, ErrorKind::invalid_argument,
            "block (" + std::to_string(k) + ", " + std::to_string(l) +
                ") is not a stored lower block");
    return toeplitz_ ? k - l : k * (k + 1) / 2 + l;
  }

  /// (k, l) of stored block i; Toeplitz blocks report (d, 0).
  std::pair<std::size_t, std::size_t> stored_position(std::size_t i) const {
    if (toeplitz_) return {i, 0};
    std::size_t k = 0;
    while ((k + 1) * (k + 2) / 2 <= i) ++k;
    return {k, i - k * (k + 1) / 2};
  }

  Eigen::MatrixXd& block(std::size_t k, std::size_t l) {
    return blocks_[storage_index(k, l)];
  }
  const Eigen::MatrixXd& block(std::size_t k, std::size_t l) const {
    return blocks_[storage_index(k, l)];
  }
  Eigen::MatrixXd& stored(std::size_t i) { return blocks_.at(i); }
  const Eigen::MatrixXd& stored(std::size_t i) const { return blocks_.at(i); }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
    require(static_cast<std::size_t>(x.size()) == rows(),
            ErrorKind::dimension_mismatch, "vector length does not match");
    const auto n = static_cast<Eigen::Index>(block_size_);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
    for (std::size_t k = 0; k < time_blocks_; ++k)
      for (std::size_t l = 0; l <= k; ++l)
        y.segment(static_cast<Eigen::Index>(k) * n, n).noalias() +=
            block(k, l) * x.segment(static_cast<Eigen::Index>(l) * n, n);
    return y;
  }

  Eigen::MatrixXd dense() const {
    const auto n = static_cast<Eigen::Index>(block_size_);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows()),
                                              static_cast<Eigen::Index>(rows()));
    for (std::size_t k = 0; k < time_blocks_; ++k)
      for (std::size_t l = 0; l <= k; ++l)
        m.block(static_cast<Eigen::Index>(k) * n,
                static_cast<Eigen::Index>(l) * n, n, n) = block(k, l);
    return m;
  }

  /// Frobenius norm of the full matrix, counting each Toeplitz block as
  /// often as it occurs.
  double frobenius_norm() const {
    double sum = 0.0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const double mult =
          toeplitz_ ? static_cast<double>(time_blocks_ - i) : 1.0;
      sum += mult * blocks_[i].squaredNorm();
    }
    return std::sqrt(sum);
  }

  /// Leading k x k block system.
  BlockLowerTriangularMatrix truncated(std::size_t k) const {
    require(k >= 1 && k <= time_blocks_, ErrorKind::invalid_argument,
            "truncation must keep between 1 and N_t blocks");
    BlockLowerTriangularMatrix out(k, block_size_, toeplitz_);
    for (std::size_t i = 0; i < out.blocks_.size(); ++i)
      out.blocks_[i] = blocks_[i];
    return out;
  }

  friend BlockLowerTriangularMatrix combine(double a,
                                            const BlockLowerTriangularMatrix& x,
                                            double b,
                                            const BlockLowerTriangularMatrix& y) {
    require(x.time_blocks_ == y.time_blocks_ &&
                x.block_size_ == y.block_size_ && x.toeplitz_ == y.toeplitz_,
            ErrorKind::dimension_mismatch, "block matrix layouts differ");
    BlockLowerTriangularMatrix out(x.time_blocks_, x.block_size_, x.toeplitz_);
    for (std::size_t i = 0; i < out.blocks_.size(); ++i)
      out.blocks_[i] = a * x.blocks_[i] + b * y.blocks_[i];
    return out;
  }

  void write_binary(std::ostream& out) const {
    const std::int64_t header[4] = {
        static_cast<std::int64_t>(time_blocks_),
        static_cast<std::int64_t>(block_size_),
        static_cast<std::int64_t>(block_size_),
        static_cast<std::int64_t>(blocks_.size())};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (const auto& b : blocks_) {
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                          Eigen::RowMajor>
          row_major = b;
      out.write(reinterpret_cast<const char*>(row_major.data()),
                static_cast<std::streamsize>(row_major.size() * sizeof(double)));
    }
  }

  static BlockLowerTriangularMatrix read_binary(std::istream& in) {
    std::int64_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    require(in.good() && header[0] >= 1 && header[1] >= 0 &&
                header[1] == header[2],
            ErrorKind::parse_error, "bad block matrix header");
    const auto nt = static_cast<std::size_t>(header[0]);
    const bool toeplitz = static_cast<std::size_t>(header[3]) == nt;
    BlockLowerTriangularMatrix m(nt, static_cast<std::size_t>(header[1]),
                                 toeplitz);
    require(m.blocks_.size() == static_cast<std::size_t>(header[3]),
            ErrorKind::parse_error, "bad stored block count");
    for (auto& b : m.blocks_) {
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
          row_major(b.rows(), b.cols());
      in.read(reinterpret_cast<char*>(row_major.data()),
              static_cast<std::streamsize>(row_major.size() * sizeof(double)));
      require(in.good(), ErrorKind::parse_error, "truncated block matrix data");
      b = row_major;
    }
    return m;
  }

  /// One line per stored entry: k,l,row,col,value.
  void write_csv(std::ostream& out) const {
    out << "k,l,row,col,value\n" << std::setprecision(17);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto [k, l] = stored_position(i);
      for (Eigen::Index r = 0; r < blocks_[i].rows(); ++r)
        for (Eigen::Index c = 0; c < blocks_[i].cols(); ++c)
          out << k << ',' << l << ',' << r << ',' << c << ','
              << blocks_[i](r, c) << '\n';
    }
  }

 private:
  std::size_t time_blocks_ = 0;
  std::size_t block_size_ = 0;
  bool toeplitz_ = false;
  std::vector<Eigen::MatrixXd> blocks_;
};

namespace detail {

inline void check_block_args(double rho, std::size_t k, std::size_t l,
                             const TimePartition& p) {
  require(std::isfinite(rho) && rho > 0.0, ErrorKind::invalid_argument,
          "distance must be positive");
  require(k < p.intervals() && l < p.intervals(), ErrorKind::invalid_argument,
          "interval index out of range");
}

template <typename H>
double second_difference(H&& h, std::size_t k, std::size_t l,
                         const TimePartition& p) {
  if (l > k) return 0.0;
  auto at = [&](std::size_t i, std::size_t j) {
    return i > j ? h(p.at(i) - p.at(j)) : 0.0;
  };
  return at(k + 1, l) - at(k, l) - at(k + 1, l + 1) + at(k, l + 1);
}

}  // namespace detail

/// int_{I_k} int_{I_l} G(rho, t - tau) dtau dt, intervals 0-based.
inline double time_weight_V(double rho, std::size_t k, std::size_t l,
                            const TimePartition& p, const KernelParams& params) {
  detail::check_block_args(rho, k, l, p);
  return detail::second_difference(
      [&](double s) { return detail::h2_unchecked(rho, s, params.alpha()); }, k,
      l, p);
}

/// Time factor of the b-form entry for test interval k and trial interval l.
inline double time_weight_b(double rho, std::size_t k, std::size_t l,
                            const TimePartition& p, const KernelParams& params) {
  detail::check_block_args(rho, k, l, p);
  return detail::second_difference(
      [&](double s) { return detail::h1_unchecked(rho, s, params.alpha()); }, k,
      l, p);
}

struct AssemblyOptions {
  int level = 3;
  // Extra quadrature tiers for lags 0 and 1.
  int near_boost = 2;
  // Disjoint pairs whose centroid distance exceeds this multiple of the
  // larger diameter skip the boost; at twice and four times the distance
  // they drop one and two tiers.
  double separation = 2.0;
  // Gauss tier of the log-time rule used by the history path.
  int history_level = 4;
  // Store one block per lag when the partition is uniform.
  bool toeplitz = true;
};

namespace detail {

struct LagTerm {
  int lag;
  double coeff;
};

struct BlockWeight {
  std::size_t slot, k, l;
  std::vector<LagTerm> terms;
};

struct LagSet {
  std::vector<BlockWeight> blocks;
  std::vector<int> lags;
};

/// Every stored block's time weight as a signed combination of one profile
/// evaluated at a short list of distinct lags.
struct TimeTable {
  std::vector<double> lags;
  LagSet near, far;
};

inline TimeTable make_time_table(const TimePartition& p, bool toeplitz) {
  TimeTable table;
  std::map<std::pair<std::size_t, std::size_t>, int> ids;
  auto lag_id = [&](std::size_t i, std::size_t j) {
    const auto key = toeplitz ? std::pair{i - j, std::size_t{0}} : std::pair{i, j};
    auto it = ids.find(key);
    if (it != ids.end()) return it->second;
    const int id = static_cast<int>(table.lags.size());
    table.lags.push_back(p.at(key.first) - p.at(key.second));
    ids.emplace(key, id);
    return id;
  };
  const std::size_t n = p.intervals();
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l <= (toeplitz ? 0 : k); ++l) {
      BlockWeight bw{toeplitz ? k : k * (k + 1) / 2 + l, k, l, {}};
      auto add = [&](std::size_t i, std::size_t j, double c) {
        if (i <= j) return;
        const int id = lag_id(i, j);
        for (auto& t : bw.terms)
          if (t.lag == id) {
            t.coeff += c;
            return;
          }
        bw.terms.push_back({id, c});
      };
      add(k + 1, l, 1.0);
      add(k, l, -1.0);
      add(k + 1, l + 1, -1.0);
      add(k, l + 1, 1.0);
      (k - l <= 1 ? table.near : table.far).blocks.push_back(std::move(bw));
    }
  for (LagSet* set : {&table.near, &table.far}) {
    std::vector<bool> used(table.lags.size(), false);
    for (const auto& b : set->blocks)
      for (const auto& t : b.terms) used[t.lag] = true;
    for (std::size_t m = 0; m < used.size(); ++m)
      if (used[m]) set->lags.push_back(static_cast<int>(m));
  }
  return table;
}

inline double separation_ratio(const TrianglePoints& a,
                               const TrianglePoints& b) {
  auto diam = [](const TrianglePoints& t) {
    return std::max({(t[0] - t[1]).norm(), (t[1] - t[2]).norm(),
                     (t[2] - t[0]).norm()});
  };
  const Vec3 ca = (a[0] + a[1] + a[2]) / 3.0, cb = (b[0] + b[1] + b[2]) / 3.0;
  return (ca - cb).norm() / std::max(diam(a), diam(b));
}

struct PairLevels {
  int near, far;
};

inline PairLevels pair_levels(const TrianglePoints& a, const TrianglePoints& b,
                              const PairAdjacency& adj,
                              const AssemblyOptions& options) {
  const int boosted = options.level + options.near_boost;
  if (adj.kind != AdjacencyKind::disjoint) return {boosted, options.level};
  const double ratio = separation_ratio(a, b) / options.separation;
  if (ratio <= 1.0) return {boosted, options.level};
  const int drop = ratio <= 2.0 ? 1 : 2;
  const int level = std::max(0, options.level - drop);
  return {level, level};
}

/// Integrates the time weights of every block in `set` against the pair
/// (a, b). weights(rho, out) fills `channels` values per block of the set;
/// sink(block_index, values, node) accumulates them.
template <typename Weights, typename Sink>
void integrate_lag_set(const TrianglePoints& a, const TrianglePoints& b,
                       const PairAdjacency& adj, const LagSet& set, int level,
                       int channels, Weights&& weights, Sink&& sink) {
  if (set.blocks.empty()) return;
  std::vector<double> values(set.blocks.size() * channels);
  PairRuleOptions rule_options;
  rule_options.level = level;
  rule_options.symmetric = false;
  for_each_pair_node(a, b, adj, pair_rule(rule_options),
                     [&](const PairNode& node) {
                       const double rho = (node.x - node.y).norm();
                       weights(rho, values.data());
                       for (std::size_t e = 0; e < set.blocks.size(); ++e)
                         sink(e, values.data() + e * channels, node);
                     });
}

template <typename Profile>
void combine_lags(const LagSet& set, const Profile& profile, int channels,
                  int channel, double* out) {
  for (std::size_t e = 0; e < set.blocks.size(); ++e) {
    double w = 0.0;
    for (const auto& t : set.blocks[e].terms) w += t.coeff * profile[t.lag];
    out[e * channels + channel] = w;
  }
}

struct PairTask {
  std::size_t a, b;
  PairAdjacency adj;
};

inline std::vector<PairTask> upper_pairs(const SurfaceMesh& mesh) {
  std::vector<PairTask> tasks;
  const std::size_t n = mesh.triangle_count();
  tasks.reserve(n * (n + 1) / 2);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b)
      tasks.push_back(
          {a, b, classify_pair(mesh.triangle(a), mesh.triangle(b))});
  return tasks;
}

inline void check_pair_values(const std::vector<double>& values,
                              const PairTask& task, const TimeTable& table,
                              int channels) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isfinite(values[i])) continue;
    const std::size_t e = i / channels;
    const auto& blocks = table.near.blocks;
    const auto& bw = e < blocks.size() ? blocks[e]
                                       : table.far.blocks[e - blocks.size()];
    fail(ErrorKind::numeric, "non-finite entry for block (" +
                                 std::to_string(bw.k) + ", " +
                                 std::to_string(bw.l) + "), triangle pair (" +
                                 std::to_string(task.a) + ", " +
                                 std::to_string(task.b) + ")");
  }
}

inline void require_basis(const SpaceDescriptor& space, SpatialBasis basis,
                          const char* what) {
  require(space.mesh && space.partition, ErrorKind::invalid_argument,
          "space descriptor is incomplete");
  require(space.spatial == basis, ErrorKind::invalid_argument, what);
}

inline bool use_toeplitz(const SpaceDescriptor& space,
                         const AssemblyOptions& options) {
  return options.toeplitz && space.partition->uniform();
}

}  // namespace detail

/// Single layer Galerkin matrix on P0 triangles x P0 intervals.
inline BlockLowerTriangularMatrix assemble_V(const SpaceDescriptor& space,
                                             const KernelParams& params,
                                             const AssemblyOptions& options = {}) {
  detail::require_basis(space, SpatialBasis::p0_triangle,
                        "the single layer matrix needs a P0 triangle space");
  const SurfaceMesh& mesh = *space.mesh;
  const bool toeplitz = detail::use_toeplitz(space, options);
  const detail::TimeTable table =
      detail::make_time_table(*space.partition, toeplitz);
  const auto tasks = detail::upper_pairs(mesh);
  const std::size_t n_near = table.near.blocks.size();
  const std::size_t n_blocks = n_near + table.far.blocks.size();
  std::vector<std::vector<double>> results(tasks.size());
  const double alpha = params.alpha();

  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto& task = tasks[i];
    const TrianglePoints a = triangle_points(mesh, task.a);
    const TrianglePoints b = triangle_points(mesh, task.b);
    std::vector<double> out(n_blocks, 0.0);
    std::vector<double> h(table.lags.size(), 0.0);
    auto run = [&](const detail::LagSet& set, int level, std::size_t offset) {
      detail::integrate_lag_set(
          a, b, task.adj, set, level, 1,
          [&](double rho, double* w) {
            for (int m : set.lags)
              h[m] = detail::h2_unchecked(rho, table.lags[m], alpha);
            detail::combine_lags(set, h, 1, 0, w);
          },
          [&](std::size_t e, const double* w, const PairNode& node) {
            out[offset + e] += node.weight * w[0];
          });
    };
    const auto levels = detail::pair_levels(a, b, task.adj, options);
    run(table.near, levels.near, 0);
    run(table.far, levels.far, n_near);
    detail::check_pair_values(out, task, table, 1);
    results[i] = std::move(out);
  });

  BlockLowerTriangularMatrix m(space.time_steps(), mesh.triangle_count(),
                               toeplitz);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    for (std::size_t e = 0; e < n_blocks; ++e) {
      const auto& bw = e < n_near ? table.near.blocks[e]
                                  : table.far.blocks[e - n_near];
      auto& block = m.stored(bw.slot);
      const auto ia = static_cast<Eigen::Index>(task.a);
      const auto ib = static_cast<Eigen::Index>(task.b);
      block(ia, ib) = results[i][e];
      block(ib, ia) = results[i][e];
    }
  }
  return m;
}

/// The two parts of the hypersingular matrix: D = alpha^2 curl + alpha b.
struct DParts {
  BlockLowerTriangularMatrix curl;
  BlockLowerTriangularMatrix b;
};

namespace detail {

enum class BPath { closed_form, history };

// Pieces of one history block: w(s) = w0 + slope (s - s0) on segment `seg`.
struct HistoryPiece {
  int segment;
  double w0, slope;
};

struct HistoryTable {
  std::vector<std::pair<double, double>> segments;
  // Indexed like the far and near block lists of the matching TimeTable;
  // empty for diagonal blocks.
  std::vector<std::vector<HistoryPiece>> near, far;
};

/// Overlap length w(s) of {(t, tau) in I_k x I_l : t - tau = s} as a
/// piecewise linear function, cut at its kinks.
inline HistoryTable make_history_table(const TimePartition& p,
                                       const TimeTable& table) {
  HistoryTable out;
  std::map<std::pair<double, double>, int> ids;
  auto pieces_of = [&](const BlockWeight& bw) {
    std::vector<HistoryPiece> pieces;
    if (bw.l == bw.k) return pieces;
    const double tk = p.at(bw.k), tk1 = p.at(bw.k + 1);
    const double tl = p.at(bw.l), tl1 = p.at(bw.l + 1);
    auto w = [&](double s) {
      return std::max(0.0, std::min(tk1, tl1 + s) - std::max(tk, tl + s));
    };
    std::vector<double> kinks{tk - tl1, tk - tl, tk1 - tl1, tk1 - tl};
    std::sort(kinks.begin(), kinks.end());
    for (int i = 0; i < 3; ++i) {
      const double s0 = kinks[i], s1 = kinks[i + 1];
      if (s1 <= s0) continue;
      const double w0 = w(s0), w1 = w(s1);
      if (w0 == 0.0 && w1 == 0.0) continue;
      auto key = std::pair{s0, s1};
      auto it = ids.find(key);
      if (it == ids.end()) {
        it = ids.emplace(key, static_cast<int>(out.segments.size())).first;
        out.segments.push_back(key);
      }
      pieces.push_back({it->second, w0, (w1 - w0) / (s1 - s0)});
    }
    return pieces;
  };
  for (const auto& bw : table.near.blocks) out.near.push_back(pieces_of(bw));
  for (const auto& bw : table.far.blocks) out.far.push_back(pieces_of(bw));
  return out;
}

/// {int g, int g (s - s0)} over [s0, s1] for g = dG/ds, by Gauss rules in
/// log s. Pieces have unit length up to just past the peak at
/// rho^2 = 4 alpha s and grow linearly beyond it. Below z = rho^2 / (4 alpha s)
/// = 50 the kernel is dropped.
inline std::array<double, 2> history_moments(double rho, double s0, double s1,
                                             double alpha,
                                             const LineRule& gauss) {
  const double rho2 = rho * rho;
  const double lo = std::max(s0, rho2 / (200.0 * alpha));
  if (lo >= s1) return {0.0, 0.0};
  const double u1 = std::log(s1);
  const double peak = std::log(rho2 / (4.0 * alpha)) + 1.0;
  double m0 = 0.0, m1 = 0.0;
  double a = std::log(lo);
  while (a < u1) {
    double b = std::min(u1, a + std::max(1.0, a - peak + 1.0));
    if (a < peak && b > peak) b = peak;
    if (u1 - b < 0.25) b = u1;
    const double du = b - a;
    for (std::size_t q = 0; q < gauss.points.size(); ++q) {
      // s dG/ds = (z - 3/2) G with G = c exp(-z - 3u/2)
      const double u = a + gauss.points[q] * du;
      const double s = std::exp(u);
      const double z = rho2 / (4.0 * alpha * s);
      const double f = (z - 1.5) * std::exp(-z - 1.5 * u) * du * gauss.weights[q];
      m0 += f;
      m1 += f * (s - s0);
    }
    a = b;
  }
  const double c = 1.0 / std::pow(4.0 * pi * alpha, 1.5);
  return {c * m0, c * m1};
}

/// Curl and b parts of D with P1 hats in space. Each pair result holds, per
/// block, the scalar int int w_V followed by the 3 x 3 matrix
/// int int w_b phi_i phi_j.
inline DParts assemble_d_parts(const SpaceDescriptor& space,
                               const KernelParams& params,
                               const AssemblyOptions& options, BPath path,
                               bool with_curl) {
  require_basis(space, SpatialBasis::p1_vertex,
                "the hypersingular matrix needs a P1 vertex space");
  const SurfaceMesh& mesh = *space.mesh;
  const TimePartition& partition = *space.partition;
  const bool toeplitz = use_toeplitz(space, options);
  const TimeTable table = make_time_table(partition, toeplitz);
  const HistoryTable history = path == BPath::history
                                   ? make_history_table(partition, table)
                                   : HistoryTable{};
  const LineRule gauss = gauss_legendre(2 + 2 * options.history_level);
  const auto tasks = upper_pairs(mesh);
  const std::size_t n_near = table.near.blocks.size();
  const std::size_t n_blocks = n_near + table.far.blocks.size();
  constexpr int channels = 2;
  constexpr int stride = 10;
  std::vector<std::vector<double>> results(tasks.size());
  const double alpha = params.alpha();

  parallel_for(tasks.size(), [&](std::size_t i) {
    const auto& task = tasks[i];
    const TrianglePoints a = triangle_points(mesh, task.a);
    const TrianglePoints b = triangle_points(mesh, task.b);
    std::vector<double> out(n_blocks * stride, 0.0);
    std::vector<double> h1(table.lags.size(), 0.0), h2(table.lags.size(), 0.0);
    std::vector<std::array<double, 2>> moments(history.segments.size());
    std::vector<char> done(history.segments.size());
    auto run = [&](const LagSet& set,
                   const std::vector<std::vector<HistoryPiece>>& pieces,
                   int level, std::size_t offset) {
      integrate_lag_set(
          a, b, task.adj, set, level, channels,
          [&](double rho, double* w) {
            for (int m : set.lags) {
              if (with_curl)
                h1_h2_unchecked(rho, table.lags[m], alpha, h1[m], h2[m]);
              else
                h1[m] = h1_unchecked(rho, table.lags[m], alpha);
            }
            if (with_curl) combine_lags(set, h2, channels, 0, w);
            combine_lags(set, h1, channels, 1, w);
            if (path != BPath::history) return;
            std::fill(done.begin(), done.end(), 0);
            for (std::size_t e = 0; e < set.blocks.size(); ++e) {
              if (pieces[e].empty()) continue;
              double v = 0.0;
              for (const auto& piece : pieces[e]) {
                if (!done[piece.segment]) {
                  const auto& seg = history.segments[piece.segment];
                  moments[piece.segment] =
                      history_moments(rho, seg.first, seg.second, alpha, gauss);
                  done[piece.segment] = 1;
                }
                const auto& mo = moments[piece.segment];
                v += piece.w0 * mo[0] + piece.slope * mo[1];
              }
              w[e * channels + 1] = v;
            }
          },
          [&](std::size_t e, const double* w, const PairNode& node) {
            double* o = out.data() + (offset + e) * stride;
            o[0] += node.weight * w[0];
            const double wb = node.weight * w[1];
            for (int p = 0; p < 3; ++p)
              for (int q = 0; q < 3; ++q)
                o[1 + 3 * p + q] += wb * node.bary_x[p] * node.bary_y[q];
          });
    };
    const auto levels = pair_levels(a, b, task.adj, options);
    run(table.near, history.near, levels.near, 0);
    run(table.far, history.far, levels.far, n_near);
    check_pair_values(out, task, table, stride);
    results[i] = std::move(out);
  });

  std::vector<std::array<Vec3, 3>> curls(mesh.triangle_count());
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t)
    for (int i = 0; i < 3; ++i)
      curls[t][i] = p1_surface_gradient_and_curl(mesh, t, i).curl;

  const std::size_t nv = mesh.vertex_count();
  DParts parts{BlockLowerTriangularMatrix(space.time_steps(), nv, toeplitz),
               BlockLowerTriangularMatrix(space.time_steps(), nv, toeplitz)};
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    const Triangle& ta = mesh.triangle(task.a);
    const Triangle& tb = mesh.triangle(task.b);
    const double nn = mesh.normal(task.a).dot(mesh.normal(task.b));
    for (std::size_t e = 0; e < n_blocks; ++e) {
      const auto& bw = e < n_near ? table.near.blocks[e]
                                  : table.far.blocks[e - n_near];
      const double* o = results[i].data() + e * stride;
      auto& c = parts.curl.stored(bw.slot);
      auto& bb = parts.b.stored(bw.slot);
      for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q) {
          const auto vi = static_cast<Eigen::Index>(ta[p]);
          const auto vj = static_cast<Eigen::Index>(tb[q]);
          const double cv = curls[task.a][p].dot(curls[task.b][q]) * o[0];
          const double bv = nn * o[1 + 3 * p + q];
          c(vi, vj) += cv;
          bb(vi, vj) += bv;
          if (task.a != task.b) {
            c(vj, vi) += cv;
            bb(vj, vi) += bv;
          }
        }
    }
  }
  return parts;
}

}  // namespace detail

inline DParts assemble_D_parts(const SpaceDescriptor& space,
                               const KernelParams& params,
                               const AssemblyOptions& options = {}) {
  return detail::assemble_d_parts(space, params, options,
                                  detail::BPath::closed_form, true);
}

/// Hypersingular matrix D = alpha^2 curl + alpha b on P1 hats x P0 intervals.
inline BlockLowerTriangularMatrix assemble_D(const SpaceDescriptor& space,
                                             const KernelParams& params,
                                             const AssemblyOptions& options = {}) {
  const DParts parts = assemble_D_parts(space, params, options);
  const double alpha = params.alpha();
  return combine(alpha * alpha, parts.curl, alpha, parts.b);
}

inline BlockLowerTriangularMatrix assemble_b_matrix(
    const SpaceDescriptor& space, const KernelParams& params,
    const AssemblyOptions& options = {}) {
  return detail::assemble_d_parts(space, params, options,
                                  detail::BPath::closed_form, false)
      .b;
}

/// The b-form matrix with history blocks (l < k) integrated in time as
/// int dG/ds w(s) ds by quadrature instead of through H1. Diagonal blocks
/// use H1 as in assemble_b_matrix.
inline BlockLowerTriangularMatrix assemble_b_matrix_history(
    const SpaceDescriptor& space, const KernelParams& params,
    const AssemblyOptions& options = {}) {
  return detail::assemble_d_parts(space, params, options,
                                  detail::BPath::history, false)
      .b;
}

struct PotentialOptions {
  double tolerance = 1e-10;
  int max_depth = 8;
  int order = 10;
};

namespace detail {

inline Vec3 closest_point_on_triangle(const Vec3& p, const TrianglePoints& t) {
  const Vec3 &a = t[0], &b = t[1], &c = t[2];
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + d1 / (d1 - d3) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + d2 / (d2 - d6) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// Signed solid angle of triangle t seen from p (Van Oosterom and Strackee).
inline double solid_angle(const Vec3& p, const TrianglePoints& t) {
  const Vec3 a = t[0] - p, b = t[1] - p, c = t[2] - p;
  const double la = a.norm(), lb = b.norm(), lc = c.norm();
  const double num = a.dot(b.cross(c));
  const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb +
                     b.dot(c) * la;
  return 2.0 * std::atan2(num, den);
}

/// int_T f(y, bary(y)) by recursive 1:4 splitting until a parent and its
/// children agree.
template <typename F>
double integrate_triangle_adaptive(F&& f, const TrianglePoints& t,
                                   const TriangleRule& rule, double tol,
                                   double floor, int depth) {
  using Bary = std::array<double, 3>;
  auto estimate = [&](const std::array<Bary, 3>& c) {
    std::array<Vec3, 3> pts;
    for (int i = 0; i < 3; ++i)
      pts[i] = c[i][0] * t[0] + c[i][1] * t[1] + c[i][2] * t[2];
    const double area = triangle_area(pts);
    double sum = 0.0;
    for (std::size_t q = 0; q < rule.weights.size(); ++q) {
      Bary bary{};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) bary[j] += rule.points[q][i] * c[i][j];
      const Vec3 y = bary[0] * t[0] + bary[1] * t[1] + bary[2] * t[2];
      sum += rule.weights[q] * f(y, bary);
    }
    return area * sum;
  };
  auto mid = [](const Bary& p, const Bary& q) {
    return Bary{0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])};
  };
  auto recurse = [&](auto&& self, const std::array<Bary, 3>& c, double whole,
                     int level) -> double {
    const Bary m01 = mid(c[0], c[1]), m12 = mid(c[1], c[2]),
               m20 = mid(c[2], c[0]);
    const std::array<std::array<Bary, 3>, 4> kids{{{c[0], m01, m20},
                                                   {m01, c[1], m12},
                                                   {m20, m12, c[2]},
                                                   {m12, m20, m01}}};
    std::array<double, 4> parts;
    double sum = 0.0;
    for (int i = 0; i < 4; ++i) sum += parts[i] = estimate(kids[i]);
    if (level >= depth || std::abs(sum - whole) <= tol * std::abs(sum) + floor)
      return sum;
    double refined = 0.0;
    for (int i = 0; i < 4; ++i)
      refined += self(self, kids[i], parts[i], level + 1);
    return refined;
  };
  const std::array<Bary, 3> root{Bary{1, 0, 0}, Bary{0, 1, 0}, Bary{0, 0, 1}};
  return recurse(recurse, root, estimate(root), 0);
}

inline void check_evaluation_time(const TimePartition& p, double t) {
  require(std::isfinite(t) && t > 0.0 && t <= p.final_time(),
          ErrorKind::domain_error, "evaluation time must lie in (0, T]");
}

}  // namespace detail

/// Throws domain-error unless x lies strictly inside the closed surface.
inline void require_interior(const SurfaceMesh& mesh, const Vec3& x) {
  require(all_finite(x), ErrorKind::domain_error, "non-finite point");
  double omega = 0.0, dist = INFINITY;
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const TrianglePoints pts = triangle_points(mesh, t);
    dist = std::min(dist, (detail::closest_point_on_triangle(x, pts) - x).norm());
    omega += detail::solid_angle(x, pts);
  }
  std::ostringstream where;
  where << "(" << x.transpose() << ")";
  require(dist > 1e-12 * mesh.max_diameter(), ErrorKind::domain_error,
          "point " + where.str() + " lies on the boundary");
  require(omega > 2.0 * std::numbers::pi, ErrorKind::domain_error,
          "point " + where.str() + " lies outside the surface");
}

/// Single layer potential of a P0 x P0 density at an interior point.
inline double evaluate_single_layer(const SpaceTimeDensity& density,
                                    const Vec3& x, double t,
                                    const KernelParams& params,
                                    const PotentialOptions& options = {}) {
  const SpaceDescriptor& space = density.space;
  detail::require_basis(space, SpatialBasis::p0_triangle,
                        "single layer evaluation needs a P0 density");
  const TimePartition& p = *space.partition;
  const SurfaceMesh& mesh = *space.mesh;
  detail::check_evaluation_time(p, t);
  require_interior(mesh, x);
  const double alpha = params.alpha();
  const TriangleRule rule = triangle_rule(options.order);
  double u = 0.0;
  for (std::size_t tri = 0; tri < mesh.triangle_count(); ++tri) {
    std::vector<std::pair<std::size_t, double>> active;
    for (std::size_t l = 0; l < p.intervals() && p.at(l) < t; ++l)
      if (density.at(l, tri) != 0.0) active.push_back({l, density.at(l, tri)});
    if (active.empty()) continue;
    auto f = [&](const Vec3& y, const std::array<double, 3>&) {
      const double rho = (x - y).norm();
      double v = 0.0;
      for (const auto& [l, c] : active)
        v += c * (detail::h1_unchecked(rho, t - p.at(l), alpha) -
                  detail::h1_unchecked(rho, t - p.at(l + 1), alpha));
      return v;
    };
    u += detail::integrate_triangle_adaptive(
        f, triangle_points(mesh, tri), rule, options.tolerance,
        1e-16 * mesh.area(tri), options.max_depth);
  }
  return u;
}

/// Double layer potential of a P1 x P0 density at an interior point.
inline double evaluate_double_layer(const SpaceTimeDensity& density,
                                    const Vec3& x, double t,
                                    const KernelParams& params,
                                    const PotentialOptions& options = {}) {
  const SpaceDescriptor& space = density.space;
  detail::require_basis(space, SpatialBasis::p1_vertex,
                        "double layer evaluation needs a P1 density");
  const TimePartition& p = *space.partition;
  const SurfaceMesh& mesh = *space.mesh;
  detail::check_evaluation_time(p, t);
  require_interior(mesh, x);
  const double alpha = params.alpha();
  const TriangleRule rule = triangle_rule(options.order);
  double u = 0.0;
  for (std::size_t tri = 0; tri < mesh.triangle_count(); ++tri) {
    const Triangle& verts = mesh.triangle(tri);
    std::vector<std::pair<std::size_t, std::array<double, 3>>> active;
    for (std::size_t l = 0; l < p.intervals() && p.at(l) < t; ++l) {
      const std::array<double, 3> c{density.at(l, verts[0]),
                                    density.at(l, verts[1]),
                                    density.at(l, verts[2])};
      if (c[0] != 0.0 || c[1] != 0.0 || c[2] != 0.0) active.push_back({l, c});
    }
    if (active.empty()) continue;
    const Vec3& n = mesh.normal(tri);
    auto f = [&](const Vec3& y, const std::array<double, 3>& bary) {
      const Vec3 r = x - y;
      const double rho = r.norm();
      double v = 0.0;
      for (const auto& [l, c] : active) {
        const double phi = c[0] * bary[0] + c[1] * bary[1] + c[2] * bary[2];
        v += phi * (detail::j1_unchecked(rho, t - p.at(l), alpha) -
                    detail::j1_unchecked(rho, t - p.at(l + 1), alpha));
      }
      return 0.5 * r.dot(n) * v;
    };
    u += detail::integrate_triangle_adaptive(
        f, triangle_points(mesh, tri), rule, options.tolerance,
        1e-16 * mesh.area(tri), options.max_depth);
  }
  return u;
}

}  // namespace stbem
