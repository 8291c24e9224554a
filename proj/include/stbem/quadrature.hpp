#pragma once

// Quadrature on [0, 1], on triangles, and on pairs of triangles.
//
// Pairs that share a vertex, an edge or the whole triangle are integrated in
// relative coordinates: the 4D parameter domain T x T is split into simplices
// in which the coincidence set is reached along a single radial coordinate
// xi, and a Duffy-type degeneracy of the parametrisation contributes the
// Jacobian factor xi^3 that cancels kernels of order |x - y|^{-1}. Every
// resulting integrand is smooth on [0, 1]^4 and is integrated by tensor
// Gauss-Legendre rules.

#include "stbem/core.hpp"
#include "stbem/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>
#include <vector>

namespace stbem {

struct LineRule {
  std::vector<double> points;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [0, 1]; exact up to degree 2n - 1.
inline LineRule gauss_legendre(int n) {
  require(n >= 1 && n <= 64, ErrorKind::invalid_argument,
          "Gauss-Legendre point count must lie in [1, 64]");
  LineRule rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Newton iteration on P_n from the usual asymptotic guess.
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      dp = n * (z * p1 - p2) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) <= 1e-16) break;
    }
    const double w = 1.0 / ((1.0 - z * z) * dp * dp);
    rule.points[i] = 0.5 * (1.0 - z);
    rule.points[n - 1 - i] = 0.5 * (1.0 + z);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

/// Composite rule on [0, 1] with `layers` geometrically shrinking intervals
/// towards 0 ([0, r^L], [r^L, r^{L-1}], ..., [r, 1]), n points each.
inline LineRule graded_gauss(int n, int layers, double ratio) {
  const LineRule base = gauss_legendre(n);
  if (layers <= 0) return base;
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::invalid_argument,
          "grading ratio must lie in (0, 1)");
  std::vector<double> cuts{0.0};
  for (int j = layers; j >= 1; --j) cuts.push_back(std::pow(ratio, j));
  cuts.push_back(1.0);
  LineRule rule;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = cuts[c], h = cuts[c + 1] - cuts[c];
    for (int i = 0; i < n; ++i) {
      rule.points.push_back(a + h * base.points[i]);
      rule.weights.push_back(h * base.weights[i]);
    }
  }
  return rule;
}

/// Rule on a triangle in barycentric coordinates; weights sum to 1 and are
/// scaled by the triangle area at the use site.
struct TriangleRule {
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;
  int order = 0;
};

/// Conical product (collapsed Gauss) rule with n x n points, exact for
/// polynomials of total degree 2n - 2.
inline TriangleRule collapsed_triangle_rule(int n) {
  const LineRule g = gauss_legendre(n);
  TriangleRule rule;
  rule.order = 2 * n - 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double u = g.points[i];
      const double v = g.points[j] * (1.0 - u);
      rule.points.push_back({1.0 - u - v, u, v});
      rule.weights.push_back(2.0 * g.weights[i] * g.weights[j] * (1.0 - u));
    }
  return rule;
}

inline TriangleRule triangle_rule(int order) {
  require(order >= 0 && order <= 20, ErrorKind::invalid_argument,
          "triangle rule order must lie in [0, 20]");
  TriangleRule rule = collapsed_triangle_rule((order + 3) / 2);
  return rule;
}

enum class AdjacencyKind { identical, shared_edge, shared_vertex, disjoint };

inline const char* to_string(AdjacencyKind kind) {
  switch (kind) {
    case AdjacencyKind::identical: return "identical";
    case AdjacencyKind::shared_edge: return "shared_edge";
    case AdjacencyKind::shared_vertex: return "shared_vertex";
    case AdjacencyKind::disjoint: return "disjoint";
  }
  return "?";
}

/// How two triangles touch. `order_a` and `order_b` list local vertex indices
/// so that shared vertices come first and in matching order.
struct PairAdjacency {
  AdjacencyKind kind = AdjacencyKind::disjoint;
  std::array<int, 3> order_a{0, 1, 2};
  std::array<int, 3> order_b{0, 1, 2};

  int shared_count() const {
    switch (kind) {
      case AdjacencyKind::identical: return 3;
      case AdjacencyKind::shared_edge: return 2;
      case AdjacencyKind::shared_vertex: return 1;
      case AdjacencyKind::disjoint: return 0;
    }
    return 0;
  }
};

/// Classifies by vertex index, never by coordinates. The local orders are
/// canonical: shared vertices by ascending global index, then the remaining
/// vertices of each triangle by ascending global index. Relabelling the
/// corners of either triangle therefore selects the same parametrisation.
inline PairAdjacency classify_pair(const Triangle& a, const Triangle& b) {
  PairAdjacency adj;
  std::vector<std::pair<int, int>> shared;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (a[i] == b[j]) shared.emplace_back(i, j);
  std::sort(shared.begin(), shared.end(),
            [&](const auto& p, const auto& q) { return a[p.first] < a[q.first]; });
  auto fill = [](const Triangle& tri, std::array<int, 3>& order,
                 const std::vector<int>& head) {
    std::vector<int> rest;
    for (int v = 0; v < 3; ++v)
      if (std::find(head.begin(), head.end(), v) == head.end())
        rest.push_back(v);
    std::sort(rest.begin(), rest.end(),
              [&](int p, int q) { return tri[p] < tri[q]; });
    std::size_t k = 0;
    for (int v : head) order[k++] = v;
    for (int v : rest) order[k++] = v;
  };
  std::vector<int> head_a, head_b;
  for (const auto& [i, j] : shared) {
    head_a.push_back(i);
    head_b.push_back(j);
  }
  fill(a, adj.order_a, head_a);
  fill(b, adj.order_b, head_b);
  switch (shared.size()) {
    case 3: adj.kind = AdjacencyKind::identical; break;
    case 2: adj.kind = AdjacencyKind::shared_edge; break;
    case 1: adj.kind = AdjacencyKind::shared_vertex; break;
    default: adj.kind = AdjacencyKind::disjoint; break;
  }
  return adj;
}

/// Node of a 4D rule on the unit reference triangle pair. (x1, x2) and
/// (y1, y2) are coordinates in the reference triangle {x1, x2 >= 0,
/// x1 + x2 <= 1}; the weight already contains the transformation Jacobian.
struct ReferencePairNode {
  double x1, x2, y1, y2, weight;
};

struct PairRuleOptions {
  int level = 3;
  int radial_layers = 0;  // geometric grading of the radial coordinates
  double radial_ratio = 0.2;
  // Mirror the shared-edge nodes so that swapping the triangles gives the
  // same value to rounding.
  bool symmetric = true;

  int points() const { return 2 + 2 * level; }
  auto key() const {
    return std::make_tuple(level, radial_layers, radial_ratio, symmetric);
  }
};

namespace detail {

inline void add_identical(std::vector<ReferencePairNode>& out,
                          const LineRule& r0, const LineRule& r1,
                          const LineRule& r2, const LineRule& r3) {
  for (std::size_t a = 0; a < r0.points.size(); ++a)
    for (std::size_t b = 0; b < r1.points.size(); ++b)
      for (std::size_t c = 0; c < r2.points.size(); ++c)
        for (std::size_t d = 0; d < r3.points.size(); ++d) {
          const double xi = r0.points[a], e1 = r1.points[b],
                       e2 = r2.points[c], e3 = r3.points[d];
          const double w = r0.weights[a] * r1.weights[b] * r2.weights[c] *
                           r3.weights[d] * xi * xi * xi * e1 * e1 * e2;
          const double p = xi * e1 * (1 - e2), q = xi * (1 - e1 * (1 - e2));
          const double r = xi * e1 * (1 - e2 * e3), s = xi * (1 - e1);
          const double t = xi * (1 - e1 * (1 - e2 * (1 - e3)));
          const double u = xi * e1 * (1 - e2 * (1 - e3));
          const double v = xi * (1 - e1), z = xi * e1 * (1 - e2);
          const double m = xi * e1 * (1 - e2 * e3);
          const double o = xi * (1 - e1 * (1 - e2));
          out.push_back({p, q, r, s, w});
          out.push_back({r, s, p, q, w});
          out.push_back({t, u, v, z, w});
          out.push_back({v, z, t, u, w});
          out.push_back({v, m, o, z, w});
          out.push_back({o, z, v, m, w});
        }
}

inline void add_shared_edge(std::vector<ReferencePairNode>& out,
                            const LineRule& r0, const LineRule& r1,
                            const LineRule& r2, const LineRule& r3,
                            bool symmetric = true) {
  for (std::size_t a = 0; a < r0.points.size(); ++a)
    for (std::size_t b = 0; b < r1.points.size(); ++b)
      for (std::size_t c = 0; c < r2.points.size(); ++c)
        for (std::size_t d = 0; d < r3.points.size(); ++d) {
          const double xi = r0.points[a], e1 = r1.points[b],
                       e2 = r2.points[c], e3 = r3.points[d];
          const double w0 = r0.weights[a] * r1.weights[b] * r2.weights[c] *
                            r3.weights[d] * xi * xi * xi * e1 * e1;
          const double w1 = w0 * e2;
          out.push_back({xi * (1 - e1 * e3), xi * e1 * e3, xi * (1 - e1),
                         xi * e1 * (1 - e2), w0});
          out.push_back({xi * (1 - e1), xi * e1, xi * (1 - e1 * e2),
                         xi * e1 * e2 * (1 - e3), w1});
          out.push_back({xi * (1 - e1), xi * e1 * (1 - e2),
                         xi * (1 - e1 * e2 * e3), xi * e1 * e2 * e3, w1});
          out.push_back({xi * (1 - e1 * e2), xi * e1 * e2 * (1 - e3),
                         xi * (1 - e1), xi * e1, w1});
          out.push_back({xi * (1 - e1), xi * e1 * (1 - e2 * e3),
                         xi * (1 - e1 * e2), xi * e1 * e2, w1});
        }
  if (!symmetric) return;
  const std::size_t count = out.size();
  for (std::size_t i = 0; i < count; ++i) {
    out[i].weight *= 0.5;
    const ReferencePairNode n = out[i];
    out.push_back({n.y1, n.y2, n.x1, n.x2, n.weight});
  }
}

inline void add_shared_vertex(std::vector<ReferencePairNode>& out,
                              const LineRule& r0, const LineRule& r1,
                              const LineRule& r2, const LineRule& r3) {
  for (std::size_t a = 0; a < r0.points.size(); ++a)
    for (std::size_t b = 0; b < r1.points.size(); ++b)
      for (std::size_t c = 0; c < r2.points.size(); ++c)
        for (std::size_t d = 0; d < r3.points.size(); ++d) {
          const double xi = r0.points[a], e1 = r1.points[b],
                       e2 = r2.points[c], e3 = r3.points[d];
          const double w = r0.weights[a] * r1.weights[b] * r2.weights[c] *
                           r3.weights[d] * xi * xi * xi * e2;
          out.push_back({xi * (1 - e1), xi * e1, xi * e2 * (1 - e3),
                         xi * e2 * e3, w});
          out.push_back({xi * e2 * (1 - e3), xi * e2 * e3, xi * (1 - e1),
                         xi * e1, w});
        }
}

inline void add_disjoint(std::vector<ReferencePairNode>& out, int n) {
  const TriangleRule tri = collapsed_triangle_rule(n);
  for (std::size_t i = 0; i < tri.weights.size(); ++i)
    for (std::size_t j = 0; j < tri.weights.size(); ++j)
      out.push_back({tri.points[i][1], tri.points[i][2], tri.points[j][1],
                     tri.points[j][2], 0.25 * tri.weights[i] * tri.weights[j]});
}

}  // namespace detail

/// Reference 4D rules for the four adjacency classes. The weights of each
/// class sum to 1/4, the squared area of the reference triangle.
struct PairRule {
  std::array<std::vector<ReferencePairNode>, 4> nodes;

  const std::vector<ReferencePairNode>& of(AdjacencyKind kind) const {
    return nodes[static_cast<int>(kind)];
  }
};

inline PairRule make_pair_rule(const PairRuleOptions& options) {
  require(options.level >= 0 && options.level <= 30,
          ErrorKind::invalid_argument, "quadrature level must lie in [0, 30]");
  const int n = options.points();
  const LineRule plain = gauss_legendre(n);
  const LineRule radial =
      graded_gauss(n, options.radial_layers, options.radial_ratio);
  PairRule rule;
  detail::add_identical(rule.nodes[0], radial, radial, plain, plain);
  detail::add_shared_edge(rule.nodes[1], radial, radial, plain, plain,
                          options.symmetric);
  detail::add_shared_vertex(rule.nodes[2], radial, plain, plain, plain);
  detail::add_disjoint(rule.nodes[3], n);
  return rule;
}

/// Process-wide cache of pair rules; returned references stay valid.
inline const PairRule& pair_rule(const PairRuleOptions& options) {
  static std::mutex mutex;
  static std::map<decltype(options.key()), PairRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(options.key());
  if (it == cache.end())
    it = cache.emplace(options.key(), make_pair_rule(options)).first;
  return it->second;
}

/// Rules for kernels f(|x - y|) whose radial moment
/// Psi(h) = int_0^h r^3 f(r) dr is available in closed form. In the three
/// singular classes every reference coordinate is proportional to xi, so
/// x - y = xi d(eta) and int_0^1 xi^3 f(xi |d|) dxi = Psi(|d|) / |d|^4. The
/// nodes below sit at xi = 1 and only eta is integrated numerically, graded
/// in the coordinates through which |d| degenerates. The disjoint class is
/// left empty.
inline PairRule make_ray_pair_rule(const PairRuleOptions& options) {
  require(options.level >= 0 && options.level <= 30,
          ErrorKind::invalid_argument, "quadrature level must lie in [0, 30]");
  const int n = options.points();
  const LineRule plain = gauss_legendre(n);
  const LineRule graded =
      graded_gauss(n, options.radial_layers, options.radial_ratio);
  const LineRule unit{{1.0}, {1.0}};
  PairRule rule;
  detail::add_identical(rule.nodes[0], unit, graded, graded, plain);
  detail::add_shared_edge(rule.nodes[1], unit, graded, plain, plain);
  detail::add_shared_vertex(rule.nodes[2], unit, plain, plain, plain);
  return rule;
}

inline const PairRule& ray_pair_rule(const PairRuleOptions& options) {
  static std::mutex mutex;
  static std::map<decltype(options.key()), PairRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(options.key());
  if (it == cache.end())
    it = cache.emplace(options.key(), make_ray_pair_rule(options)).first;
  return it->second;
}

using TrianglePoints = std::array<Vec3, 3>;

inline TrianglePoints triangle_points(const SurfaceMesh& mesh, std::size_t t) {
  return {mesh.corner(t, 0), mesh.corner(t, 1), mesh.corner(t, 2)};
}

inline double triangle_area(const TrianglePoints& p) {
  return 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
}

/// Physical quadrature node of a triangle pair. `bary_x[i]` is the value of
/// the affine hat of local vertex i of triangle A at x (likewise for y).
struct PairNode {
  Vec3 x, y;
  std::array<double, 3> bary_x, bary_y;
  double weight;
};

/// Calls visit(node) for every node of the rule matching `adjacency`.
template <typename Visitor>
void for_each_pair_node(const TrianglePoints& a, const TrianglePoints& b,
                        const PairAdjacency& adjacency, const PairRule& rule,
                        Visitor&& visit) {
  const auto& oa = adjacency.order_a;
  const auto& ob = adjacency.order_b;
  const Vec3 a0 = a[oa[0]], da1 = a[oa[1]] - a0, da2 = a[oa[2]] - a0;
  const Vec3 b0 = b[ob[0]], db1 = b[ob[1]] - b0, db2 = b[ob[2]] - b0;
  const double jac = 4.0 * triangle_area(a) * triangle_area(b);
  PairNode node;
  for (const auto& ref : rule.of(adjacency.kind)) {
    node.x = a0 + ref.x1 * da1 + ref.x2 * da2;
    node.y = b0 + ref.y1 * db1 + ref.y2 * db2;
    node.bary_x[oa[0]] = 1.0 - ref.x1 - ref.x2;
    node.bary_x[oa[1]] = ref.x1;
    node.bary_x[oa[2]] = ref.x2;
    node.bary_y[ob[0]] = 1.0 - ref.y1 - ref.y2;
    node.bary_y[ob[1]] = ref.y1;
    node.bary_y[ob[2]] = ref.y2;
    node.weight = jac * ref.weight;
    visit(node);
  }
}

/// int_A int_B f(x, y) ds_y ds_x.
template <typename Kernel>
double integrate_pair(Kernel&& f, const TrianglePoints& a,
                      const TrianglePoints& b, const PairAdjacency& adjacency,
                      const PairRuleOptions& options = {}) {
  double sum = 0.0;
  for_each_pair_node(a, b, adjacency, pair_rule(options),
                     [&](const PairNode& node) {
                       const double value = f(node.x, node.y);
                       if (!std::isfinite(value)) {
                         std::ostringstream msg;
                         msg << "kernel returned " << value << " at x = ("
                             << node.x.transpose() << "), y = ("
                             << node.y.transpose() << ")";
                         fail(ErrorKind::numeric, msg.str());
                       }
                       sum += node.weight * value;
                     });
  return sum;
}

/// Calls visit(h, weight) for every node of the ray rule, where h = |d| is
/// the length of x - y at xi = 1 and the weights include the area Jacobian.
template <typename Visitor>
void for_each_ray_node(const TrianglePoints& a, const TrianglePoints& b,
                       const PairAdjacency& adjacency,
                       const PairRuleOptions& options, Visitor&& visit) {
  require(adjacency.kind != AdjacencyKind::disjoint,
          ErrorKind::invalid_argument,
          "radial pair integration needs a shared vertex");
  const auto& oa = adjacency.order_a;
  const auto& ob = adjacency.order_b;
  const Vec3 da1 = a[oa[1]] - a[oa[0]], da2 = a[oa[2]] - a[oa[0]];
  const Vec3 db1 = b[ob[1]] - b[ob[0]], db2 = b[ob[2]] - b[ob[0]];
  const double jac = 4.0 * triangle_area(a) * triangle_area(b);
  for (const auto& ref : ray_pair_rule(options).of(adjacency.kind)) {
    const Vec3 d = ref.x1 * da1 + ref.x2 * da2 - ref.y1 * db1 - ref.y2 * db2;
    const double h = d.norm();
    // deep graded nodes can round onto the diagonal; their weight is negligible
    if (h > 0.0) visit(h, jac * ref.weight);
  }
}

/// int_A int_B f(|x - y|) for a pair sharing at least one vertex, given
/// moment(h) = Psi(h) / h^4 with Psi(h) = int_0^h r^3 f(r) dr.
template <typename Moment>
double integrate_pair_radial(Moment&& moment, const TrianglePoints& a,
                             const TrianglePoints& b,
                             const PairAdjacency& adjacency,
                             const PairRuleOptions& options = {}) {
  double sum = 0.0;
  for_each_ray_node(a, b, adjacency, options,
                    [&](double h, double w) { sum += w * moment(h); });
  return sum;
}

}  // namespace stbem
