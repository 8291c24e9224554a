#pragma once

#include "stbem/core.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace stbem {

using Triangle = std::array<int, 3>;

/// Closed, consistently outward-oriented triangulated surface. Immutable once
/// constructed; the constructor rejects anything that is not watertight.
class SurfaceMesh {
 public:
  SurfaceMesh() = default;

  /// `source_lines[t]`, when given, is the input line of triangle t and is
  /// quoted in validation errors.
  SurfaceMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles,
              std::vector<int> source_lines = {})
      : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
    validate(source_lines);
  }

  std::size_t vertex_count() const noexcept { return vertices_.size(); }
  std::size_t triangle_count() const noexcept { return triangles_.size(); }

  const std::vector<Vec3>& vertices() const noexcept { return vertices_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }

  const Vec3& vertex(int i) const { return vertices_[i]; }
  const Triangle& triangle(std::size_t t) const { return triangles_[t]; }
  const Vec3& normal(std::size_t t) const { return normals_[t]; }
  double area(std::size_t t) const { return areas_[t]; }
  const Vec3& centroid(std::size_t t) const { return centroids_[t]; }

  Vec3 corner(std::size_t t, int local) const {
    return vertices_[triangles_[t][local]];
  }

  double total_area() const {
    double sum = 0.0;
    for (double a : areas_) sum += a;
    return sum;
  }

  double diameter(std::size_t t) const {
    const Vec3 a = corner(t, 0), b = corner(t, 1), c = corner(t, 2);
    return std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
  }

  double max_diameter() const {
    double h = 0.0;
    for (std::size_t t = 0; t < triangle_count(); ++t)
      h = std::max(h, diameter(t));
    return h;
  }

  /// Sum of (1/6) v0 . (v1 x v2); positive for outward orientation.
  double signed_volume() const {
    double vol = 0.0;
    for (const auto& tri : triangles_)
      vol += vertices_[tri[0]].dot(vertices_[tri[1]].cross(vertices_[tri[2]]));
    return vol / 6.0;
  }

  std::size_t edge_count() const { return edge_count_; }

  /// V - E + F.
  long euler_characteristic() const {
    return static_cast<long>(vertex_count()) - static_cast<long>(edge_count_) +
           static_cast<long>(triangle_count());
  }

  std::pair<Vec3, Vec3> bounding_box() const {
    Vec3 lo = Vec3::Constant(INFINITY), hi = Vec3::Constant(-INFINITY);
    for (const auto& v : vertices_) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return {lo, hi};
  }

 private:
  void validate(const std::vector<int>& source_lines) {
    auto where = [&](std::size_t t) {
      std::string s = "triangle " + std::to_string(t);
      if (t < source_lines.size())
        s += " (line " + std::to_string(source_lines[t]) + ")";
      return s;
    };
    require(!vertices_.empty() && !triangles_.empty(), ErrorKind::parse_error,
            "mesh has no vertices or no triangles");
    for (std::size_t i = 0; i < vertices_.size(); ++i)
      require(all_finite(vertices_[i]), ErrorKind::parse_error,
              "vertex " + std::to_string(i) + " is not finite");

    const auto [lo, hi] = bounding_box();
    const double bbox2 = (hi - lo).squaredNorm();
    const int nv = static_cast<int>(vertices_.size());

    normals_.resize(triangles_.size());
    areas_.resize(triangles_.size());
    centroids_.resize(triangles_.size());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      for (int i : tri)
        require(i >= 0 && i < nv, ErrorKind::parse_error,
                where(t) + " references vertex " + std::to_string(i) +
                    " outside [0, " + std::to_string(nv) + ")");
      require(tri[0] != tri[1] && tri[1] != tri[2] && tri[2] != tri[0],
              ErrorKind::degenerate_triangle,
              where(t) + " repeats a vertex index");
      const Vec3 cross = (vertices_[tri[1]] - vertices_[tri[0]])
                             .cross(vertices_[tri[2]] - vertices_[tri[0]]);
      const double area = 0.5 * cross.norm();
      require(area > 1e-14 * bbox2, ErrorKind::degenerate_triangle,
              where(t) + " has vanishing area");
      areas_[t] = area;
      normals_[t] = cross / (2.0 * area);
      centroids_[t] =
          (vertices_[tri[0]] + vertices_[tri[1]] + vertices_[tri[2]]) / 3.0;
    }

    // Every directed edge must occur once, together with its reverse.
    std::map<std::pair<int, int>, std::size_t> directed;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      for (int e = 0; e < 3; ++e) {
        const std::pair<int, int> key{tri[e], tri[(e + 1) % 3]};
        const auto [it, inserted] = directed.emplace(key, t);
        if (!inserted)
          fail(ErrorKind::orientation,
               where(t) + " traverses edge (" + std::to_string(key.first) +
                   ", " + std::to_string(key.second) +
                   ") in the same direction as " + where(it->second));
      }
    }
    for (const auto& [key, t] : directed) {
      if (!directed.contains({key.second, key.first}))
        fail(ErrorKind::open_surface,
             "edge (" + std::to_string(key.first) + ", " +
                 std::to_string(key.second) + ") of " + where(t) +
                 " has no opposite neighbour");
    }
    edge_count_ = directed.size() / 2;
    require(signed_volume() > 0.0, ErrorKind::orientation,
            "mesh encloses negative volume; triangles must be counterclockwise "
            "seen from outside");
  }

  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<Vec3> normals_;
  std::vector<double> areas_;
  std::vector<Vec3> centroids_;
  std::size_t edge_count_ = 0;
};

/// Reads the ASCII mesh format: `nv nt`, nv lines `x y z`, nt lines `i j k`
/// (0-based, counterclockwise seen from outside). Lines starting with '#' are
/// ignored.
inline SurfaceMesh parse_mesh(std::istream& in,
                              const std::string& source = "<stream>") {
  std::vector<std::pair<int, std::string>> lines;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.emplace_back(number, line);
  }
  auto bad = [&](int at, const std::string& what) {
    fail(ErrorKind::parse_error,
         source + ":" + std::to_string(at) + ": " + what);
  };
  if (lines.empty()) bad(number, "missing header `nv nt`");

  long nv = -1, nt = -1;
  {
    std::istringstream hs(lines[0].second);
    std::string extra;
    if (!(hs >> nv >> nt) || (hs >> extra) || nv <= 0 || nt <= 0)
      bad(lines[0].first, "header must be two positive integers `nv nt`");
  }
  if (static_cast<long>(lines.size()) != 1 + nv + nt)
    bad(lines.back().first, "expected " + std::to_string(nv) +
                                " vertex lines and " + std::to_string(nt) +
                                " triangle lines, found " +
                                std::to_string(lines.size() - 1) + " lines");

  std::vector<Vec3> vertices(nv);
  for (long i = 0; i < nv; ++i) {
    const auto& [at, text] = lines[1 + i];
    std::istringstream ls(text);
    std::string extra;
    double x, y, z;
    if (!(ls >> x >> y >> z) || (ls >> extra))
      bad(at, "vertex line must hold three numbers");
    vertices[i] = Vec3(x, y, z);
  }
  std::vector<Triangle> triangles(nt);
  std::vector<int> source_lines(nt);
  for (long t = 0; t < nt; ++t) {
    const auto& [at, text] = lines[1 + nv + t];
    std::istringstream ls(text);
    std::string extra;
    long i, j, k;
    if (!(ls >> i >> j >> k) || (ls >> extra))
      bad(at, "triangle line must hold three integers");
    for (long idx : {i, j, k})
      if (idx < 0 || idx >= nv)
        bad(at, "vertex index " + std::to_string(idx) + " out of range");
    triangles[t] = {static_cast<int>(i), static_cast<int>(j),
                    static_cast<int>(k)};
    source_lines[t] = at;
  }
  return SurfaceMesh(std::move(vertices), std::move(triangles),
                     std::move(source_lines));
}

inline SurfaceMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open mesh " + path);
  return parse_mesh(in, path);
}

inline void write_mesh(std::ostream& out, const SurfaceMesh& mesh) {
  out.precision(17);
  out << mesh.vertex_count() << ' ' << mesh.triangle_count() << '\n';
  for (const auto& v : mesh.vertices())
    out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : mesh.triangles())
    out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

/// Surface of [0, side]^3 with every face split into n x n squares of two
/// triangles each.
inline SurfaceMesh generate_cube_mesh(int subdivisions, double side = 1.0) {
  require(subdivisions >= 1, ErrorKind::invalid_argument,
          "cube subdivisions must be at least 1");
  require(std::isfinite(side) && side > 0.0, ErrorKind::invalid_argument,
          "cube side must be positive");
  const int n = subdivisions;
  std::map<std::array<int, 3>, int> index;
  std::vector<Vec3> vertices;
  auto vertex = [&](const std::array<int, 3>& ijk) {
    const auto [it, inserted] =
        index.emplace(ijk, static_cast<int>(vertices.size()));
    if (inserted)
      vertices.emplace_back(side * ijk[0] / n, side * ijk[1] / n,
                            side * ijk[2] / n);
    return it->second;
  };
  // (fixed axis, fixed value, u axis, v axis) with u x v pointing outward.
  struct Face {
    int axis, value, u, v;
  };
  const Face faces[] = {{0, 0, 2, 1}, {0, n, 1, 2}, {1, 0, 0, 2},
                        {1, n, 2, 0}, {2, 0, 1, 0}, {2, n, 0, 1}};
  std::vector<Triangle> triangles;
  triangles.reserve(12 * n * n);
  for (const Face& f : faces) {
    auto at = [&](int a, int b) {
      std::array<int, 3> ijk{};
      ijk[f.axis] = f.value;
      ijk[f.u] = a;
      ijk[f.v] = b;
      return vertex(ijk);
    };
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const int p00 = at(a, b), p10 = at(a + 1, b), p11 = at(a + 1, b + 1),
                  p01 = at(a, b + 1);
        triangles.push_back({p00, p10, p11});
        triangles.push_back({p00, p11, p01});
      }
  }
  return SurfaceMesh(std::move(vertices), std::move(triangles));
}

/// Splits every triangle into four through its edge midpoints.
inline SurfaceMesh refine_uniform(const SurfaceMesh& mesh) {
  std::vector<Vec3> vertices = mesh.vertices();
  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
    const auto [it, inserted] =
        midpoint.emplace(key, static_cast<int>(vertices.size()));
    if (inserted) vertices.push_back(0.5 * (vertices[a] + vertices[b]));
    return it->second;
  };
  std::vector<Triangle> triangles;
  triangles.reserve(4 * mesh.triangle_count());
  for (const auto& t : mesh.triangles()) {
    const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
    triangles.push_back({t[0], ab, ca});
    triangles.push_back({ab, t[1], bc});
    triangles.push_back({ca, bc, t[2]});
    triangles.push_back({ab, bc, ca});
  }
  return SurfaceMesh(std::move(vertices), std::move(triangles));
}

/// Icosahedron refined `refinements` times with vertices projected onto the
/// sphere of the given radius around the origin.
inline SurfaceMesh generate_icosphere(int refinements, double radius = 1.0) {
  require(refinements >= 0, ErrorKind::invalid_argument,
          "icosphere refinements must be non-negative");
  require(std::isfinite(radius) && radius > 0.0, ErrorKind::invalid_argument,
          "icosphere radius must be positive");
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));
  std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0},
                         {1, -phi, 0}, {0, -1, phi},  {0, 1, phi},
                         {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},
                         {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<Triangle> t = {{0, 11, 5}, {0, 5, 1},   {0, 1, 7},   {0, 7, 10},
                             {0, 10, 11}, {1, 5, 9},  {5, 11, 4},  {11, 10, 2},
                             {10, 7, 6}, {7, 1, 8},   {3, 9, 4},   {3, 4, 2},
                             {3, 2, 6},  {3, 6, 8},   {3, 8, 9},   {4, 9, 5},
                             {2, 4, 11}, {6, 2, 10},  {8, 6, 7},   {9, 8, 1}};
  for (auto& p : v) p = radius * p.normalized();
  SurfaceMesh mesh(std::move(v), std::move(t));
  for (int r = 0; r < refinements; ++r) {
    SurfaceMesh fine = refine_uniform(mesh);
    std::vector<Vec3> projected = fine.vertices();
    for (auto& p : projected) p = radius * p.normalized();
    mesh = SurfaceMesh(std::move(projected), fine.triangles());
  }
  return mesh;
}

struct HatDerivatives {
  Vec3 grad;
  Vec3 curl;
};

/// Surface gradient of the P1 hat attached to local vertex `local_vertex` of
/// `triangle`, and its surface curl grad x n. Both are constant on the
/// triangle.
inline HatDerivatives p1_surface_gradient_and_curl(const SurfaceMesh& mesh,
                                                   std::size_t triangle,
                                                   int local_vertex) {
  require(triangle < mesh.triangle_count(), ErrorKind::invalid_argument,
          "triangle index out of range");
  require(local_vertex >= 0 && local_vertex < 3, ErrorKind::invalid_argument,
          "local vertex must be 0, 1 or 2");
  const Vec3& n = mesh.normal(triangle);
  const Vec3 opposite = mesh.corner(triangle, (local_vertex + 2) % 3) -
                        mesh.corner(triangle, (local_vertex + 1) % 3);
  const Vec3 grad = n.cross(opposite) / (2.0 * mesh.area(triangle));
  return {grad, grad.cross(n)};
}

/// Strictly increasing breakpoints 0 = t_0 < ... < t_N = T. Interval k
/// (0-based) is (t_k, t_{k+1}).
class TimePartition {
 public:
  TimePartition() = default;

  explicit TimePartition(std::vector<double> breakpoints)
      : breakpoints_(std::move(breakpoints)) {
    require(breakpoints_.size() >= 2, ErrorKind::invalid_argument,
            "a time partition needs at least one interval");
    require(breakpoints_.front() == 0.0, ErrorKind::invalid_argument,
            "time partition must start at 0");
    for (std::size_t k = 1; k < breakpoints_.size(); ++k)
      require(std::isfinite(breakpoints_[k]) &&
                  breakpoints_[k] > breakpoints_[k - 1],
              ErrorKind::invalid_argument,
              "breakpoints must be finite and strictly increasing");
    const double first = step(0);
    uniform_ = true;
    for (std::size_t k = 1; k < intervals(); ++k)
      if (std::abs(step(k) - first) > 1e-12 * first) uniform_ = false;
  }

  std::size_t intervals() const noexcept { return breakpoints_.size() - 1; }
  double final_time() const noexcept { return breakpoints_.back(); }
  double at(std::size_t k) const { return breakpoints_[k]; }
  double step(std::size_t k) const {
    return breakpoints_[k + 1] - breakpoints_[k];
  }
  bool uniform() const noexcept { return uniform_; }
  const std::vector<double>& breakpoints() const noexcept {
    return breakpoints_;
  }

  /// Interval index containing t in (t_k, t_{k+1}]; t <= 0 maps to 0.
  std::size_t locate(double t) const {
    std::size_t k = 0;
    while (k + 1 < intervals() && t > breakpoints_[k + 1]) ++k;
    return k;
  }

 private:
  std::vector<double> breakpoints_{0.0, 1.0};
  bool uniform_ = true;
};

struct UniformGrading {};
struct PowerGrading {
  double exponent = 1.0;
};
using TimeGrading = std::variant<UniformGrading, PowerGrading>;

/// Uniform steps, or t_k = (k / N)^p T for a power grading.
inline TimePartition make_time_partition(double final_time, int steps,
                                         TimeGrading grading = UniformGrading{}) {
  require(std::isfinite(final_time) && final_time > 0.0,
          ErrorKind::invalid_argument, "final time must be positive");
  require(steps >= 1, ErrorKind::invalid_argument,
          "number of time steps must be at least 1");
  std::vector<double> t(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    const double x = static_cast<double>(k) / steps;
    if (const auto* power = std::get_if<PowerGrading>(&grading)) {
      require(power->exponent > 0.0, ErrorKind::invalid_argument,
              "grading exponent must be positive");
      t[k] = std::pow(x, power->exponent) * final_time;
    } else {
      t[k] = x * final_time;
    }
  }
  t.back() = final_time;
  return TimePartition(std::move(t));
}

}  // namespace stbem
