#pragma once

// Convex hulls, collision shapes and their mass properties.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "physekf/errors.hpp"
#include "physekf/liegroup.hpp"

namespace physekf {

/// Planar polygon of a hull, vertices counter-clockwise seen from outside.
struct HullFace {
  Vec3 normal;
  double offset = 0.0;  // normal . x == offset on the face
  std::vector<int> vertices;
};

struct ConvexHull {
  std::vector<Vec3> vertices;
  std::vector<HullFace> faces;

  int support_index(const Vec3& dir) const {
    int best = 0;
    double best_dot = vertices[0].dot(dir);
    for (int i = 1; i < static_cast<int>(vertices.size()); ++i) {
      const double d = vertices[i].dot(dir);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    return best;
  }

  double bounding_radius() const {
    double r = 0.0;
    for (const auto& v : vertices) r = std::max(r, v.norm());
    return r;
  }
};

namespace detail {

struct Tri {
  std::array<int, 3> v;
  Vec3 n;
  double d;
  bool alive = true;
};

inline Tri make_tri(const std::vector<Vec3>& pts, int a, int b, int c) {
  Tri t{{a, b, c}, (pts[b] - pts[a]).cross(pts[c] - pts[a]), 0.0};
  const double len = t.n.norm();
  if (len > 0.0) t.n /= len;
  t.d = t.n.dot(pts[a]);
  return t;
}

}  // namespace detail

/// Incremental convex hull. Coplanar triangles are merged into polygonal faces
/// and only extreme points are kept. Throws InvalidInput for degenerate input.
inline ConvexHull compute_convex_hull(const std::vector<Vec3>& input) {
  using detail::Tri;
  if (input.size() < 4) throw InvalidInput("convex hull needs at least 4 points");

  double scale = 0.0;
  for (const auto& p : input) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double eps = 1e-10 * std::max(scale, 1.0);

  // Initial tetrahedron from extreme points.
  const auto& pts = input;
  const int n = static_cast<int>(pts.size());
  int i0 = 0;
  int i1 = -1;
  for (int i = 1; i < n; ++i) {
    if (i1 < 0 || (pts[i] - pts[i0]).squaredNorm() > (pts[i1] - pts[i0]).squaredNorm()) i1 = i;
  }
  if ((pts[i1] - pts[i0]).norm() <= eps) throw InvalidInput("degenerate hull: coincident points");
  int i2 = -1;
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = (pts[i1] - pts[i0]).cross(pts[i] - pts[i0]).norm();
    if (a > best) {
      best = a;
      i2 = i;
    }
  }
  if (i2 < 0 || best <= eps * scale) throw InvalidInput("degenerate hull: collinear points");
  const Vec3 plane_n = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = -1;
  best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double h = std::abs(plane_n.dot(pts[i] - pts[i0]));
    if (h > best) {
      best = h;
      i3 = i;
    }
  }
  if (i3 < 0 || best <= eps) throw InvalidInput("degenerate hull: coplanar points");

  std::vector<Tri> tris;
  const Vec3 inner = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
  auto add = [&](int a, int b, int c) {
    Tri t = detail::make_tri(pts, a, b, c);
    if (t.n.dot(inner) > t.d) {
      std::swap(t.v[1], t.v[2]);
      t = detail::make_tri(pts, t.v[0], t.v[1], t.v[2]);
    }
    tris.push_back(t);
  };
  add(i0, i1, i2);
  add(i0, i1, i3);
  add(i0, i2, i3);
  add(i1, i2, i3);

  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    std::vector<int> visible;
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
      if (tris[t].alive && tris[t].n.dot(pts[p]) - tris[t].d > eps) visible.push_back(t);
    }
    if (visible.empty()) continue;
    // Directed edges of visible triangles; horizon edges have no reversed twin.
    std::map<std::pair<int, int>, int> edges;
    for (int t : visible) {
      for (int k = 0; k < 3; ++k) edges[{tris[t].v[k], tris[t].v[(k + 1) % 3]}] += 1;
    }
    std::vector<std::pair<int, int>> horizon;
    for (const auto& [e, cnt] : edges) {
      if (edges.find({e.second, e.first}) == edges.end()) horizon.push_back(e);
    }
    for (int t : visible) tris[t].alive = false;
    for (const auto& [a, b] : horizon) tris.push_back(detail::make_tri(pts, a, b, p));
  }

  // Merge coplanar triangles into polygons and reindex the used vertices.
  std::vector<Tri> alive;
  for (const auto& t : tris) {
    if (t.alive) alive.push_back(t);
  }
  std::vector<int> group(alive.size(), -1);
  std::vector<HullFace> faces;
  const double plane_tol = 1e-9 * std::max(scale, 1.0);
  for (std::size_t t = 0; t < alive.size(); ++t) {
    if (group[t] >= 0) continue;
    group[t] = static_cast<int>(faces.size());
    HullFace f{alive[t].n, alive[t].d, {}};
    std::vector<int> ids(alive[t].v.begin(), alive[t].v.end());
    for (std::size_t u = t + 1; u < alive.size(); ++u) {
      if (group[u] < 0 && alive[u].n.dot(f.normal) > 1.0 - 1e-9 &&
          std::abs(alive[u].d - f.offset) < plane_tol) {
        group[u] = group[t];
        ids.insert(ids.end(), alive[u].v.begin(), alive[u].v.end());
      }
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Vec3 c = Vec3::Zero();
    for (int id : ids) c += pts[id];
    c /= static_cast<double>(ids.size());
    const Vec3 u = (pts[ids[0]] - c).normalized();
    const Vec3 w = f.normal.cross(u);
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
      const Vec3 da = pts[a] - c;
      const Vec3 db = pts[b] - c;
      return std::atan2(da.dot(w), da.dot(u)) < std::atan2(db.dot(w), db.dot(u));
    });
    f.vertices = std::move(ids);
    faces.push_back(std::move(f));
  }

  std::map<int, int> remap;
  ConvexHull hull;
  for (auto& f : faces) {
    for (int& id : f.vertices) {
      auto it = remap.find(id);
      if (it == remap.end()) {
        const int next = static_cast<int>(hull.vertices.size());
        remap.emplace(id, next);
        hull.vertices.push_back(pts[id]);
        id = next;
      } else {
        id = it->second;
      }
    }
  }
  // Stable vertex order: follow input order.
  std::vector<std::pair<int, int>> order(remap.begin(), remap.end());
  std::vector<int> new_index(hull.vertices.size());
  for (std::size_t k = 0; k < order.size(); ++k) new_index[order[k].second] = static_cast<int>(k);
  std::vector<Vec3> sorted(hull.vertices.size());
  for (std::size_t k = 0; k < order.size(); ++k) sorted[k] = pts[order[k].first];
  for (auto& f : faces) {
    for (int& id : f.vertices) id = new_index[id];
  }
  hull.vertices = std::move(sorted);
  hull.faces = std::move(faces);
  return hull;
}

struct MassProperties {
  double volume = 0.0;
  Vec3 centroid = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about the centroid
};

/// Uniform-density solid of the hull with the given mass.
inline MassProperties hull_mass_properties(const ConvexHull& hull, double mass) {
  if (!(mass > 0.0)) throw InvalidInput("mass must be positive");
  const Vec3 ref = hull.vertices[0];
  double vol = 0.0;
  Vec3 first = Vec3::Zero();
  Mat3 second = Mat3::Zero();
  for (const auto& f : hull.faces) {
    const Vec3 a = hull.vertices[f.vertices[0]] - ref;
    for (std::size_t k = 1; k + 1 < f.vertices.size(); ++k) {
      const Vec3 b = hull.vertices[f.vertices[k]] - ref;
      const Vec3 c = hull.vertices[f.vertices[k + 1]] - ref;
      const double det = a.dot(b.cross(c));
      const Vec3 s = a + b + c;
      vol += det / 6.0;
      first += det / 24.0 * s;
      second += det / 120.0 * (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose());
    }
  }
  if (!(vol > 0.0)) throw InvalidInput("degenerate hull: zero volume");
  MassProperties mp;
  mp.volume = vol;
  const Vec3 c = first / vol;
  mp.centroid = ref + c;
  const Mat3 cov = second - vol * c * c.transpose();
  const double rho = mass / vol;
  mp.inertia = rho * (cov.trace() * Mat3::Identity() - cov);
  return mp;
}

/// Inertia of the solid hull about its centroid.
inline Mat3 inertia_from_convex_mesh(const std::vector<Vec3>& vertices, double mass) {
  return hull_mass_properties(compute_convex_hull(vertices), mass).inertia;
}

struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  double friction = 1.0;  // multiplies the body-side coefficient
};

struct ConvexMesh {
  ConvexHull hull;  // body frame, centroid at the origin
};

struct Sphere {
  double radius = 0.0;
};

struct Box {
  Vec3 half_extents = Vec3::Zero();
  ConvexHull hull;
};

using Shape = std::variant<ConvexMesh, Sphere, Box>;

/// Hull recentred on its centroid, as stored in a ConvexMesh.
inline ConvexMesh make_convex_mesh(const std::vector<Vec3>& vertices) {
  ConvexHull hull = compute_convex_hull(vertices);
  const Vec3 c = hull_mass_properties(hull, 1.0).centroid;
  for (auto& v : hull.vertices) v -= c;
  for (auto& f : hull.faces) f.offset = f.normal.dot(hull.vertices[f.vertices[0]]);
  return {std::move(hull)};
}

inline Box make_box(const Vec3& half) {
  if ((half.array() <= 0.0).any()) throw InvalidInput("box half extents must be positive");
  std::vector<Vec3> v;
  for (int z : {-1, 1}) {
    for (int y : {-1, 1}) {
      for (int x : {-1, 1}) v.emplace_back(x * half.x(), y * half.y(), z * half.z());
    }
  }
  return {half, compute_convex_hull(v)};
}

/// Right prism over a regular polygon, axis along body z.
inline ConvexMesh make_prism(double radius, double height, int sides) {
  std::vector<Vec3> v;
  for (int k = 0; k < sides; ++k) {
    const double a = 2.0 * M_PI * k / sides;
    for (double z : {-0.5 * height, 0.5 * height}) v.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
  }
  return make_convex_mesh(v);
}

inline Sphere make_sphere(double radius) {
  if (!(radius > 0.0)) throw InvalidInput("sphere radius must be positive");
  return {radius};
}

inline const ConvexHull* shape_hull(const Shape& s) {
  if (const auto* m = std::get_if<ConvexMesh>(&s)) return &m->hull;
  if (const auto* b = std::get_if<Box>(&s)) return &b->hull;
  return nullptr;
}

inline Mat3 shape_inertia(const Shape& s, double mass) {
  if (const auto* sp = std::get_if<Sphere>(&s)) {
    return 0.4 * mass * sp->radius * sp->radius * Mat3::Identity();
  }
  return hull_mass_properties(*shape_hull(s), mass).inertia;
}

/// Lowest point of the shape along body -z, used to rest objects on a floor.
inline double shape_bottom_offset(const Shape& s) {
  if (const auto* sp = std::get_if<Sphere>(&s)) return sp->radius;
  double lo = 0.0;
  for (const auto& v : shape_hull(s)->vertices) lo = std::min(lo, v.z());
  return -lo;
}

/// Reads vertex positions from an ASCII OFF or OBJ file (faces are ignored).
inline std::vector<Vec3> load_mesh_vertices(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open mesh file: " + path);
  std::vector<Vec3> out;
  std::string line;
  const bool is_off = path.size() >= 4 && path.substr(path.size() - 4) == ".off";
  if (is_off) {
    std::vector<std::string> tokens;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::istringstream ls(line);
      std::string t;
      while (ls >> t) tokens.push_back(t);
    }
    if (tokens.empty() || tokens[0] != "OFF") throw InvalidInput("not an OFF file: " + path);
    if (tokens.size() < 4) throw InvalidInput("truncated OFF header: " + path);
    const int nv = std::stoi(tokens[1]);
    if (static_cast<int>(tokens.size()) < 4 + 3 * nv) throw InvalidInput("truncated OFF vertex list: " + path);
    for (int i = 0; i < nv; ++i) {
      out.emplace_back(std::stod(tokens[4 + 3 * i]), std::stod(tokens[5 + 3 * i]), std::stod(tokens[6 + 3 * i]));
    }
  } else {
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string tag;
      if (!(ls >> tag) || tag != "v") continue;
      double x, y, z;
      if (!(ls >> x >> y >> z)) {
        throw InvalidInput(path + ":" + std::to_string(lineno) + ": malformed vertex");
      }
      out.emplace_back(x, y, z);
    }
  }
  return out;
}

}  // namespace physekf
