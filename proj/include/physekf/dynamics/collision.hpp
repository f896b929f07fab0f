#pragma once

// Narrow-phase collision detection: plane, sphere and convex-hull pairs.
// Hull pairs use GJK for separation distance, EPA for penetration, and
// reference/incident face clipping for a manifold of up to four points.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "physekf/dynamics/body.hpp"

namespace physekf {

inline constexpr int kStatic = -1;
inline constexpr int kFrictionDirections = 4;

/// Geometric feature a contact came from, so the contact can be re-evaluated
/// at a perturbed state without re-running detection.
enum class ContactFeature { kPlaneVertex, kPlaneSphere, kPair };

struct Contact {
  int body_a = kStatic;  // kStatic for a plane
  int body_b = kStatic;
  int plane = -1;        // plane index when body_a is static
  ContactFeature feature = ContactFeature::kPair;
  int vertex = -1;       // hull vertex for kPlaneVertex
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // world, from a towards b
  double depth = 0.0;           // >= 0 when penetrating
  std::array<Vec3, kFrictionDirections> friction_dirs;
};

namespace detail {

/// Convex core (hull or point) plus a radius, placed in the world.
struct SupportShape {
  const ConvexHull* hull = nullptr;
  double radius = 0.0;
  Vec3 center = Vec3::Zero();
  Mat3 R = Mat3::Identity();

  Vec3 support(const Vec3& d) const {
    if (hull == nullptr) return center;
    return R * hull->vertices[hull->support_index(R.transpose() * d)] + center;
  }
};

inline SupportShape support_shape(const RigidBody& b) {
  SupportShape s;
  s.center = b.pose.p;
  s.R = b.pose.R.matrix();
  if (const auto* sp = std::get_if<Sphere>(b.shape.get())) {
    s.radius = sp->radius;
  } else {
    s.hull = shape_hull(*b.shape);
  }
  return s;
}

struct SimplexPoint {
  Vec3 w, a, b;
};

struct GjkResult {
  bool overlap = false;
  double distance = 0.0;  // between cores
  Vec3 point_a = Vec3::Zero();
  Vec3 point_b = Vec3::Zero();
  std::vector<SimplexPoint> simplex;
};

/// Closest point of the simplex hull to the origin: tries every sub-simplex,
/// keeps affine projections with non-negative barycentric weights.
inline void reduce_simplex(std::vector<SimplexPoint>& s, Vec3& v, Vec3& pa, Vec3& pb) {
  const int n = static_cast<int>(s.size());
  double best = std::numeric_limits<double>::infinity();
  int best_mask = 0;
  Eigen::Vector4d best_lambda = Eigen::Vector4d::Zero();
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::array<int, 4> ids{};
    int k = 0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) ids[k++] = i;
    }
    Eigen::Vector4d lambda = Eigen::Vector4d::Zero();
    if (k == 1) {
      lambda(0) = 1.0;
    } else {
      // minimize |w0 + sum_j mu_j (wj - w0)|^2
      Eigen::MatrixXd E(3, k - 1);
      for (int j = 1; j < k; ++j) E.col(j - 1) = s[ids[j]].w - s[ids[0]].w;
      const Eigen::MatrixXd gram = E.transpose() * E;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
      lu.setThreshold(1e-12);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd mu = lu.solve(-E.transpose() * s[ids[0]].w);
      lambda(0) = 1.0 - mu.sum();
      for (int j = 1; j < k; ++j) lambda(j) = mu(j - 1);
      if ((lambda.head(k).array() < -1e-12).any()) continue;
    }
    Vec3 p = Vec3::Zero();
    for (int j = 0; j < k; ++j) p += lambda(j) * s[ids[j]].w;
    const double d = p.squaredNorm();
    if (d < best - 1e-18 || (d <= best + 1e-18 && __builtin_popcount(mask) < __builtin_popcount(best_mask))) {
      best = d;
      best_mask = mask;
      best_lambda = lambda;
    }
  }
  std::vector<SimplexPoint> kept;
  v.setZero();
  pa.setZero();
  pb.setZero();
  int k = 0;
  for (int i = 0; i < n; ++i) {
    if (best_mask & (1 << i)) {
      const double l = best_lambda(k++);
      v += l * s[i].w;
      pa += l * s[i].a;
      pb += l * s[i].b;
      kept.push_back(s[i]);
    }
  }
  s = std::move(kept);
}

inline GjkResult gjk(const SupportShape& A, const SupportShape& B) {
  GjkResult r;
  Vec3 v = A.center - B.center;
  if (v.squaredNorm() < 1e-24) v = Vec3::UnitX();
  Vec3 pa = Vec3::Zero();
  Vec3 pb = Vec3::Zero();
  std::vector<SimplexPoint> s;
  bool have_v = false;
  for (int iter = 0; iter < 64; ++iter) {
    const Vec3 sa = A.support(-v);
    const Vec3 sb = B.support(v);
    const Vec3 w = sa - sb;
    if (have_v) {
      const double vv = v.squaredNorm();
      if (vv - v.dot(w) <= 1e-12 * std::max(vv, 1e-12)) break;
      bool dup = false;
      for (const auto& p : s) dup = dup || (p.w - w).squaredNorm() < 1e-24;
      if (dup) break;
    }
    s.push_back({w, sa, sb});
    reduce_simplex(s, v, pa, pb);
    have_v = true;
    if (s.size() == 4 || v.squaredNorm() < 1e-20) {
      r.overlap = true;
      break;
    }
  }
  r.distance = r.overlap ? 0.0 : v.norm();
  r.point_a = pa;
  r.point_b = pb;
  r.simplex = std::move(s);
  return r;
}

struct EpaResult {
  Vec3 normal;  // from A towards B
  double depth;
};

/// Penetration of two overlapping hulls from the GJK terminal simplex.
inline std::optional<EpaResult> epa(const SupportShape& A, const SupportShape& B, std::vector<SimplexPoint> pts) {
  auto support = [&](const Vec3& d) {
    const Vec3 sa = A.support(d);
    const Vec3 sb = B.support(-d);
    return SimplexPoint{sa - sb, sa, sb};
  };
  auto volume = [&](const std::vector<SimplexPoint>& p) {
    return (p[1].w - p[0].w).dot((p[2].w - p[0].w).cross(p[3].w - p[0].w));
  };
  // Grow the simplex to a full tetrahedron.
  const std::array<Vec3, 6> axes = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(),
                                    -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
  if (pts.empty()) pts.push_back(support(Vec3::UnitX()));
  while (pts.size() < 4) {
    bool added = false;
    std::vector<Vec3> dirs;
    if (pts.size() == 1) {
      dirs.assign(axes.begin(), axes.end());
    } else if (pts.size() == 2) {
      const Vec3 e = pts[1].w - pts[0].w;
      for (const auto& ax : axes) {
        const Vec3 d = e.cross(ax);
        if (d.squaredNorm() > 1e-12) dirs.push_back(d.normalized());
      }
    } else {
      const Vec3 n = (pts[1].w - pts[0].w).cross(pts[2].w - pts[0].w);
      if (n.squaredNorm() > 1e-24) {
        dirs.push_back(n.normalized());
        dirs.push_back(-n.normalized());
      }
    }
    for (const auto& d : dirs) {
      const SimplexPoint p = support(d);
      bool fresh = true;
      for (const auto& q : pts) fresh = fresh && (q.w - p.w).squaredNorm() > 1e-20;
      if (!fresh) continue;
      if (pts.size() == 1 || (pts.size() == 2 && (pts[1].w - pts[0].w).cross(p.w - pts[0].w).squaredNorm() > 1e-20) ||
          (pts.size() == 3 && std::abs((pts[1].w - pts[0].w).dot((pts[2].w - pts[0].w).cross(p.w - pts[0].w))) > 1e-18)) {
        pts.push_back(p);
        added = true;
        break;
      }
    }
    if (!added) return std::nullopt;
  }
  if (volume(pts) < 0.0) std::swap(pts[0], pts[1]);

  struct Face {
    std::array<int, 3> v;
    Vec3 n;
    double d;
  };
  std::vector<SimplexPoint> verts = pts;
  std::vector<Face> faces;
  auto make_face = [&](int a, int b, int c) -> std::optional<Face> {
    Vec3 n = (verts[b].w - verts[a].w).cross(verts[c].w - verts[a].w);
    const double len = n.norm();
    if (len < 1e-14) return std::nullopt;
    n /= len;
    return Face{{a, b, c}, n, n.dot(verts[a].w)};
  };
  // Outward orientation given positive volume of (0,1,2,3).
  for (const auto& f : std::vector<std::array<int, 3>>{{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}}) {
    auto face = make_face(f[0], f[1], f[2]);
    if (!face) return std::nullopt;
    faces.push_back(*face);
  }
  for (const auto& f : faces) {
    if (f.d < -1e-12) return std::nullopt;  // origin outside the initial polytope
  }

  for (int iter = 0; iter < 128; ++iter) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(faces.size()); ++i) {
      if (faces[i].d < faces[best].d) best = i;
    }
    const Face closest = faces[best];
    const SimplexPoint p = support(closest.n);
    const double gain = p.w.dot(closest.n) - closest.d;
    if (gain < 1e-10 || iter == 127) return EpaResult{closest.n, std::max(closest.d, 0.0)};
    verts.push_back(p);
    const int pi = static_cast<int>(verts.size()) - 1;
    std::vector<std::pair<int, int>> edges;
    std::vector<Face> kept;
    for (const auto& f : faces) {
      if (f.n.dot(p.w) - f.d > 1e-12) {
        for (int k = 0; k < 3; ++k) {
          const std::pair<int, int> e{f.v[k], f.v[(k + 1) % 3]};
          auto rev = std::find(edges.begin(), edges.end(), std::make_pair(e.second, e.first));
          if (rev != edges.end()) {
            edges.erase(rev);
          } else {
            edges.push_back(e);
          }
        }
      } else {
        kept.push_back(f);
      }
    }
    for (const auto& [a, b] : edges) {
      auto face = make_face(a, b, pi);
      if (face) kept.push_back(*face);
    }
    if (kept.empty()) return EpaResult{closest.n, std::max(closest.d, 0.0)};
    faces = std::move(kept);
  }
  return std::nullopt;
}

inline void world_polygon(const RigidBody& body, const HullFace& f, std::vector<Vec3>& out) {
  const ConvexHull& h = *shape_hull(*body.shape);
  out.clear();
  for (int id : f.vertices) out.push_back(body.pose.R * h.vertices[id] + body.pose.p);
}

inline int most_aligned_face(const RigidBody& body, const Vec3& dir_world, double& alignment) {
  const ConvexHull& h = *shape_hull(*body.shape);
  const Vec3 local = body.pose.R.inverse() * dir_world;
  int best = 0;
  alignment = -2.0;
  for (int i = 0; i < static_cast<int>(h.faces.size()); ++i) {
    const double a = h.faces[i].normal.dot(local);
    if (a > alignment + 1e-12) {
      alignment = a;
      best = i;
    }
  }
  return best;
}

/// Keeps at most four points: deepest, farthest from it, then area-maximizing.
inline std::vector<int> reduce_manifold(const std::vector<Vec3>& pts, const std::vector<double>& depth) {
  const int n = static_cast<int>(pts.size());
  if (n <= 4) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<int> chosen;
  int a = 0;
  for (int i = 1; i < n; ++i) {
    if (depth[i] > depth[a] + 1e-12) a = i;
  }
  chosen.push_back(a);
  int b = -1;
  for (int i = 0; i < n; ++i) {
    if (i != a && (b < 0 || (pts[i] - pts[a]).squaredNorm() > (pts[b] - pts[a]).squaredNorm() + 1e-15)) b = i;
  }
  chosen.push_back(b);
  int c = -1;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    if (i == a || i == b) continue;
    const double ar = (pts[b] - pts[a]).cross(pts[i] - pts[a]).norm();
    if (ar > best + 1e-15) {
      best = ar;
      c = i;
    }
  }
  chosen.push_back(c);
  int d = -1;
  best = -1.0;
  for (int i = 0; i < n; ++i) {
    if (i == a || i == b || i == c) continue;
    const double s = (pts[i] - pts[a]).norm() + (pts[i] - pts[b]).norm() + (pts[i] - pts[c]).norm();
    if (s > best + 1e-15) {
      best = s;
      d = i;
    }
  }
  chosen.push_back(d);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline void hull_hull_manifold(const RigidBody& A, const RigidBody& B, int ia, int ib, const Vec3& n, double margin,
                               const Vec3& fallback_point, double fallback_depth, std::vector<Contact>& out) {
  double align_a = 0.0;
  double align_b = 0.0;
  const int fa = most_aligned_face(A, n, align_a);
  const int fb = most_aligned_face(B, -n, align_b);
  const bool ref_is_a = align_a + 1e-3 >= align_b;
  const RigidBody& ref = ref_is_a ? A : B;
  const RigidBody& inc = ref_is_a ? B : A;
  const HullFace& ref_face = shape_hull(*ref.shape)->faces[ref_is_a ? fa : fb];
  const Vec3 ref_n = ref.pose.R * ref_face.normal;
  double dummy = 0.0;
  const int inc_face = most_aligned_face(inc, -ref_n, dummy);

  std::vector<Vec3> ref_poly;
  std::vector<Vec3> poly;
  world_polygon(ref, ref_face, ref_poly);
  world_polygon(inc, shape_hull(*inc.shape)->faces[inc_face], poly);
  const double ref_off = ref_n.dot(ref_poly[0]);

  const int m = static_cast<int>(ref_poly.size());
  for (int e = 0; e < m && !poly.empty(); ++e) {
    const Vec3& p0 = ref_poly[e];
    const Vec3& p1 = ref_poly[(e + 1) % m];
    const Vec3 side = (p1 - p0).cross(ref_n);
    const double off = side.dot(p0);
    std::vector<Vec3> clipped;
    const int k = static_cast<int>(poly.size());
    for (int i = 0; i < k; ++i) {
      const Vec3& s = poly[i];
      const Vec3& t = poly[(i + 1) % k];
      const double ds = side.dot(s) - off;
      const double dt = side.dot(t) - off;
      if (ds <= 0.0) clipped.push_back(s);
      if ((ds < 0.0 && dt > 0.0) || (ds > 0.0 && dt < 0.0)) clipped.push_back(s + (t - s) * (ds / (ds - dt)));
    }
    poly = std::move(clipped);
  }
  std::vector<Vec3> pts;
  std::vector<double> depths;
  for (const auto& p : poly) {
    const double sep = ref_n.dot(p) - ref_off;
    if (sep < margin) {
      pts.push_back(p);
      depths.push_back(-sep);
    }
  }
  const Vec3 normal = ref_is_a ? ref_n : Vec3(-ref_n);
  if (pts.empty()) {
    Contact c;
    c.body_a = ia;
    c.body_b = ib;
    c.point = fallback_point;
    c.normal = n;
    c.depth = fallback_depth;
    out.push_back(c);
    return;
  }
  for (int i : reduce_manifold(pts, depths)) {
    Contact c;
    c.body_a = ia;
    c.body_b = ib;
    c.point = pts[i];
    c.normal = normal;
    c.depth = depths[i];
    out.push_back(c);
  }
}

inline void sphere_hull_contact(const RigidBody& sphere_body, const RigidBody& hull_body, bool sphere_is_a, int ia,
                                int ib, double margin, std::vector<Contact>& out) {
  const SupportShape S = support_shape(sphere_body);
  const SupportShape H = support_shape(hull_body);
  const GjkResult g = gjk(S, H);
  Vec3 n_hull_to_sphere;
  double sep;
  if (!g.overlap && g.distance > 1e-12) {
    n_hull_to_sphere = (g.point_a - g.point_b) / g.distance;
    sep = g.distance - S.radius;
  } else {
    // Centre inside the hull: least-penetrated face.
    const ConvexHull& h = *H.hull;
    const Vec3 local = H.R.transpose() * (S.center - H.center);
    int best = 0;
    double best_d = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(h.faces.size()); ++i) {
      const double d = h.faces[i].normal.dot(local) - h.faces[i].offset;
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    n_hull_to_sphere = H.R * h.faces[best].normal;
    sep = best_d - S.radius;
  }
  if (sep >= margin) return;
  Contact c;
  c.body_a = ia;
  c.body_b = ib;
  c.point = S.center - S.radius * n_hull_to_sphere;
  c.normal = sphere_is_a ? Vec3(-n_hull_to_sphere) : n_hull_to_sphere;
  c.depth = -sep;
  out.push_back(c);
}

inline void pair_contacts(const std::vector<RigidBody>& bodies, int ia, int ib, double margin,
                          std::vector<Contact>& out) {
  const RigidBody& A = bodies[ia];
  const RigidBody& B = bodies[ib];
  const auto* sa = std::get_if<Sphere>(A.shape.get());
  const auto* sb = std::get_if<Sphere>(B.shape.get());
  const double ra = sa ? sa->radius : shape_hull(*A.shape)->bounding_radius();
  const double rb = sb ? sb->radius : shape_hull(*B.shape)->bounding_radius();
  if ((B.pose.p - A.pose.p).norm() > ra + rb + margin) return;

  if (sa && sb) {
    const Vec3 d = B.pose.p - A.pose.p;
    const double dist = d.norm();
    const double sep = dist - sa->radius - sb->radius;
    if (sep >= margin) return;
    Contact c;
    c.body_a = ia;
    c.body_b = ib;
    c.normal = dist > 1e-12 ? Vec3(d / dist) : Vec3::UnitZ();
    c.point = A.pose.p + sa->radius * c.normal;
    c.depth = -sep;
    out.push_back(c);
    return;
  }
  if (sa) {
    sphere_hull_contact(A, B, true, ia, ib, margin, out);
    return;
  }
  if (sb) {
    sphere_hull_contact(B, A, false, ia, ib, margin, out);
    return;
  }
  const SupportShape SA = support_shape(A);
  const SupportShape SB = support_shape(B);
  const GjkResult g = gjk(SA, SB);
  if (!g.overlap) {
    if (g.distance >= margin) return;
    const Vec3 n = (g.point_b - g.point_a) / std::max(g.distance, 1e-300);
    hull_hull_manifold(A, B, ia, ib, n, margin, 0.5 * (g.point_a + g.point_b), -g.distance, out);
    return;
  }
  auto pen = epa(SA, SB, g.simplex);
  Vec3 n = (B.pose.p - A.pose.p).normalized();
  double depth = 0.0;
  if (pen) {
    n = pen->normal;
    depth = pen->depth;
  }
  hull_hull_manifold(A, B, ia, ib, n, margin, 0.5 * (A.pose.p + B.pose.p), depth, out);
}

inline Vec3 default_tangent(const Vec3& n) {
  Vec3 axis = Vec3::UnitX();
  const Vec3 a = n.cwiseAbs();
  if (a.y() < a.x() && a.y() <= a.z()) axis = Vec3::UnitY();
  if (a.z() < a.x() && a.z() < a.y()) axis = Vec3::UnitZ();
  return n.cross(axis).normalized();
}

}  // namespace detail

inline Vec3 relative_contact_velocity(const std::vector<RigidBody>& bodies, const Contact& c) {
  Vec3 u = Vec3::Zero();
  if (c.body_b != kStatic) u += bodies[c.body_b].point_velocity(c.point);
  if (c.body_a != kStatic) u -= bodies[c.body_a].point_velocity(c.point);
  return u;
}

/// Friction pyramid aligned with the current relative sliding velocity, or a
/// fixed tangent basis when the contact is (nearly) sticking.
inline void assign_friction_directions(const std::vector<RigidBody>& bodies, Contact& c) {
  const Vec3 u = relative_contact_velocity(bodies, c);
  const Vec3 ut = u - u.dot(c.normal) * c.normal;
  const double speed = ut.norm();
  const Vec3 t1 = speed > 1e-6 ? Vec3(ut / speed) : detail::default_tangent(c.normal);
  const Vec3 t2 = c.normal.cross(t1);
  c.friction_dirs = {t1, -t1, t2, -t2};
}

/// Recomputes the geometry of plane contacts from current body poses. Pair
/// contacts keep their stored geometry.
inline void refresh_contact(const std::vector<RigidBody>& bodies, const std::vector<Plane>& planes, Contact& c) {
  if (c.feature == ContactFeature::kPlaneVertex) {
    const RigidBody& b = bodies[c.body_b];
    const Plane& pl = planes[c.plane];
    c.point = b.pose.R * shape_hull(*b.shape)->vertices[c.vertex] + b.pose.p;
    c.depth = pl.offset - pl.normal.dot(c.point);
  } else if (c.feature == ContactFeature::kPlaneSphere) {
    const RigidBody& b = bodies[c.body_b];
    const Plane& pl = planes[c.plane];
    const double r = std::get<Sphere>(*b.shape).radius;
    c.point = b.pose.p - r * pl.normal;
    c.depth = pl.offset - pl.normal.dot(c.point);
  }
  assign_friction_directions(bodies, c);
}

/// All contacts closer than `margin`. Order: planes before pairs, then by body
/// index, then by hull vertex index.
inline std::vector<Contact> generate_contacts(const std::vector<RigidBody>& bodies, const std::vector<Plane>& planes,
                                              double margin) {
  std::vector<Contact> out;
  for (int pi = 0; pi < static_cast<int>(planes.size()); ++pi) {
    const Plane& pl = planes[pi];
    for (int bi = 0; bi < static_cast<int>(bodies.size()); ++bi) {
      const RigidBody& b = bodies[bi];
      if (const auto* sp = std::get_if<Sphere>(b.shape.get())) {
        const double dist = pl.normal.dot(b.pose.p) - sp->radius - pl.offset;
        if (dist < margin) {
          Contact c;
          c.body_b = bi;
          c.plane = pi;
          c.feature = ContactFeature::kPlaneSphere;
          out.push_back(c);
        }
        continue;
      }
      const ConvexHull& h = *shape_hull(*b.shape);
      const Mat3 R = b.pose.R.matrix();
      for (int vi = 0; vi < static_cast<int>(h.vertices.size()); ++vi) {
        const double dist = pl.normal.dot(R * h.vertices[vi] + b.pose.p) - pl.offset;
        if (dist < margin) {
          Contact c;
          c.body_b = bi;
          c.plane = pi;
          c.feature = ContactFeature::kPlaneVertex;
          c.vertex = vi;
          out.push_back(c);
        }
      }
    }
  }
  for (auto& c : out) {
    c.normal = planes[c.plane].normal;
    refresh_contact(bodies, planes, c);
  }
  const std::size_t first_pair = out.size();
  for (int i = 0; i < static_cast<int>(bodies.size()); ++i) {
    for (int j = i + 1; j < static_cast<int>(bodies.size()); ++j) detail::pair_contacts(bodies, i, j, margin, out);
  }
  for (std::size_t k = first_pair; k < out.size(); ++k) assign_friction_directions(bodies, out[k]);
  return out;
}

}  // namespace physekf
