#pragma once

// Mixed LCP of velocity-impulse rigid-body dynamics and its interior-point solve.
//
// Unknowns: post-step twists xi, duals z = [lambda_c; lambda_f; gamma] >= 0,
// slacks s >= 0, equality multipliers y:
//
//   M xi - G^T z - A^T y = q           q = M xi_t + dt f_ext
//   s    - G xi  - F z   = m
//   A xi                 = 0           s >= 0, z >= 0, s^T z = 0
//
// Rows of G: normal rows J_c, friction rows J_f, then zero rows for the cone.
// F couples friction rows to gamma through E and the cone rows to the duals
// through mu and -E^T. Normal rows:   s_c = J_c xi + m_c
//                     friction rows:  s_f = J_f xi + E gamma
//                     cone rows:      s_g = mu lambda_c - E^T lambda_f

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "physekf/dynamics/collision.hpp"
#include "physekf/errors.hpp"

namespace physekf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ContactParams {
  double restitution = 0.0;
  double baumgarte = 0.1;
  Vec3 gravity{0.0, 0.0, -9.81};
};

struct LcpProblem {
  MatrixXd M;
  MatrixXd G;
  MatrixXd A;
  MatrixXd F;
  VectorXd q;
  VectorXd m;
  VectorXd xi_free;  // M^-1 q, exact for gravity-only loading
  int num_contacts = 0;
  int num_dirs = kFrictionDirections;
  std::vector<double> mu;  // per contact

  int num_vars() const { return static_cast<int>(M.rows()); }
  int num_rows() const { return static_cast<int>(G.rows()); }
};

struct LcpResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
};

struct LcpSolution {
  VectorXd xi;
  VectorXd z;
  VectorXd s;
  VectorXd y;
  LcpResiduals residuals;
  int iterations = 0;
  bool polished = false;
  /// Rows with s = 0 (z free) in the polished solution.
  std::vector<char> active;

  Twist twist(int body) const { return Twist::from_stacked(xi.segment<6>(6 * body)); }
};

struct IpmOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;
  double regularization = 1e-10;
  bool polish = true;
};

/// Combined friction coefficient of a contact pair.
inline double contact_friction(const std::vector<RigidBody>& bodies, const std::vector<Plane>& planes,
                               const Contact& c) {
  if (c.body_a == kStatic) return planes[c.plane].friction * bodies[c.body_b].friction;
  return std::sqrt(bodies[c.body_a].friction * bodies[c.body_b].friction);
}

/// Jacobian row mapping stacked twists to the relative velocity of b w.r.t. a along `dir` at `point`.
inline Eigen::RowVectorXd jacobian_row(const std::vector<RigidBody>& bodies, const Contact& c, const Vec3& dir) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(6 * static_cast<int>(bodies.size()));
  if (c.body_b != kStatic) {
    const Vec3 r = c.point - bodies[c.body_b].pose.p;
    row.segment<3>(6 * c.body_b) = r.cross(dir).transpose();
    row.segment<3>(6 * c.body_b + 3) = dir.transpose();
  }
  if (c.body_a != kStatic) {
    const Vec3 r = c.point - bodies[c.body_a].pose.p;
    row.segment<3>(6 * c.body_a) -= r.cross(dir).transpose();
    row.segment<3>(6 * c.body_a + 3) -= dir.transpose();
  }
  return row;
}

inline LcpProblem assemble_lcp(const std::vector<RigidBody>& bodies, std::span<const Contact> contacts,
                               std::span<const double> mu, double dt, const ContactParams& params) {
  const int nb = static_cast<int>(bodies.size());
  const int nc = static_cast<int>(contacts.size());
  const int nd = kFrictionDirections;
  const int nv = 6 * nb;
  const int rows = nc * (2 + nd);
  if (!(dt > 0.0)) throw InvalidInput("time step must be positive");
  if (static_cast<int>(mu.size()) != nc) throw InvalidInput("one friction coefficient per contact required");

  LcpProblem p;
  p.num_contacts = nc;
  p.num_dirs = nd;
  p.mu.assign(mu.begin(), mu.end());
  p.M = MatrixXd::Zero(nv, nv);
  p.q = VectorXd::Zero(nv);
  VectorXd xi_t(nv);
  for (int i = 0; i < nb; ++i) {
    const RigidBody& b = bodies[i];
    p.M.block<3, 3>(6 * i, 6 * i) = b.inertia_world();
    p.M.block<3, 3>(6 * i + 3, 6 * i + 3) = b.mass * Mat3::Identity();
    xi_t.segment<6>(6 * i) = b.twist.stacked();
  }
  p.q = p.M * xi_t;
  p.xi_free = xi_t;
  for (int i = 0; i < nb; ++i) {
    p.q.segment<3>(6 * i + 3) += dt * bodies[i].mass * params.gravity;
    p.xi_free.segment<3>(6 * i + 3) += dt * params.gravity;
  }

  p.G = MatrixXd::Zero(rows, nv);
  p.F = MatrixXd::Zero(rows, rows);
  p.A = MatrixXd::Zero(0, nv);
  p.m = VectorXd::Zero(rows);
  const int f0 = nc;            // first friction row
  const int g0 = nc + nc * nd;  // first cone row
  for (int k = 0; k < nc; ++k) {
    const Contact& c = contacts[k];
    if (mu[k] < 0.0) throw InvalidInput("friction coefficient must be non-negative");
    p.G.row(k) = jacobian_row(bodies, c, c.normal);
    const double vn = p.G.row(k).dot(xi_t);
    // Linear in depth on both sides of zero, so resting contacts stay differentiable.
    p.m(k) = params.restitution * vn - params.baumgarte * c.depth / dt;
    for (int d = 0; d < nd; ++d) {
      p.G.row(f0 + k * nd + d) = jacobian_row(bodies, c, c.friction_dirs[d]);
      p.F(f0 + k * nd + d, g0 + k) = 1.0;   // E
      p.F(g0 + k, f0 + k * nd + d) = -1.0;  // -E^T
    }
    p.F(g0 + k, k) = mu[k];
  }
  return p;
}

namespace detail {

inline LcpResiduals lcp_residuals(const LcpProblem& p, const LcpSolution& x) {
  LcpResiduals r;
  VectorXd rd = p.M * x.xi - p.G.transpose() * x.z - p.q;
  if (p.A.rows() > 0) rd -= p.A.transpose() * x.y;
  r.dual = rd.lpNorm<Eigen::Infinity>();
  if (p.num_rows() > 0) {
    const VectorXd rp = x.s - p.G * x.xi - p.F * x.z - p.m;
    r.primal = rp.lpNorm<Eigen::Infinity>();
    r.gap = x.s.dot(x.z);
  }
  if (p.A.rows() > 0) r.primal = std::max(r.primal, (p.A * x.xi).lpNorm<Eigen::Infinity>());
  return r;
}

inline double max_step(const VectorXd& v, const VectorXd& dv) {
  double a = 1.0;
  for (int i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
  }
  return a;
}

}  // namespace detail

inline double lcp_scale(const LcpProblem& p) { return 1.0 + p.q.norm(); }

/// Solves with a prescribed active set: rows flagged active have s = 0, the
/// others z = 0. Returns false when the reduced system is inconsistent.
inline bool solve_lcp_active_set(const LcpProblem& p, const std::vector<char>& active, LcpSolution& out) {
  const int n = p.num_vars();
  const int rows = p.num_rows();
  const int ne = static_cast<int>(p.A.rows());
  std::vector<int> act;
  for (int i = 0; i < rows; ++i) {
    if (active[i]) act.push_back(i);
  }
  const int na = static_cast<int>(act.size());
  MatrixXd K = MatrixXd::Zero(n + na + ne, n + na + ne);
  VectorXd rhs = VectorXd::Zero(n + na + ne);
  K.topLeftCorner(n, n) = p.M;
  rhs.head(n) = p.q;
  for (int a = 0; a < na; ++a) {
    K.block(0, n + a, n, 1) = -p.G.row(act[a]).transpose();
    K.block(n + a, 0, 1, n) = p.G.row(act[a]);
    for (int b = 0; b < na; ++b) K(n + a, n + b) = p.F(act[a], act[b]);
    rhs(n + a) = -p.m(act[a]);
  }
  if (ne > 0) {
    K.block(0, n + na, n, ne) = -p.A.transpose();
    K.block(n + na, 0, ne, n) = p.A;
  }
  const Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(K);
  const VectorXd x = cod.solve(rhs);
  const double scale = lcp_scale(p);
  if ((K * x - rhs).lpNorm<Eigen::Infinity>() > 1e-9 * scale || !x.allFinite()) return false;
  out.xi = x.head(n);
  out.z = VectorXd::Zero(rows);
  for (int a = 0; a < na; ++a) out.z(act[a]) = x(n + a);
  out.y = x.tail(ne);
  out.s = p.G * out.xi + p.F * out.z + p.m;
  for (int a = 0; a < na; ++a) out.s(act[a]) = 0.0;
  out.active = active;
  out.polished = true;
  out.residuals = detail::lcp_residuals(p, out);
  return true;
}

/// Mehrotra predictor-corrector on the mixed LCP, followed by an active-set
/// polish that makes complementarity exact when it stays feasible.
inline LcpSolution solve_lcp(const LcpProblem& p, const IpmOptions& opt = {}) {
  const int n = p.num_vars();
  const int rows = p.num_rows();
  const int ne = static_cast<int>(p.A.rows());
  LcpSolution x;
  x.active.assign(rows, 0);
  if (rows == 0 && ne == 0) {
    x.xi = p.xi_free.size() == n ? p.xi_free : VectorXd(p.M.llt().solve(p.q));
    x.z = VectorXd::Zero(0);
    x.s = VectorXd::Zero(0);
    x.y = VectorXd::Zero(0);
    x.residuals = detail::lcp_residuals(p, x);
    return x;
  }

  x.xi = p.M.llt().solve(p.q);
  x.z = VectorXd::Ones(rows);
  x.s = VectorXd::Ones(rows);
  x.y = VectorXd::Zero(ne);
  const double scale = lcp_scale(p);
  const double tol = opt.tolerance * scale;
  const int dim = n + rows + ne;

  for (int it = 0; it <= opt.max_iterations; ++it) {
    x.iterations = it;
    VectorXd rd = p.M * x.xi - p.G.transpose() * x.z - p.q;
    if (ne > 0) rd -= p.A.transpose() * x.y;
    const VectorXd rp = x.s - p.G * x.xi - p.F * x.z - p.m;
    const VectorXd re = ne > 0 ? VectorXd(p.A * x.xi) : VectorXd::Zero(0);
    const double gap = x.s.dot(x.z);
    const double res = std::max({rd.lpNorm<Eigen::Infinity>(), rows ? rp.lpNorm<Eigen::Infinity>() : 0.0,
                                 ne ? re.lpNorm<Eigen::Infinity>() : 0.0});
    if (res <= tol && gap <= tol) break;
    if (it == opt.max_iterations) {
      throw NumericalFailure("LCP interior point: iteration cap reached (residual " + std::to_string(res) +
                             ", gap " + std::to_string(gap) + ")");
    }
    const double mu = rows ? gap / rows : 0.0;

    MatrixXd K = MatrixXd::Zero(dim, dim);
    K.topLeftCorner(n, n) = p.M + opt.regularization * MatrixXd::Identity(n, n);
    K.block(0, n, n, rows) = -p.G.transpose();
    K.block(n, 0, rows, n) = p.G;
    K.block(n, n, rows, rows) = p.F;
    for (int i = 0; i < rows; ++i) K(n + i, n + i) += x.s(i) / x.z(i) + opt.regularization;
    if (ne > 0) {
      K.block(0, n + rows, n, ne) = -p.A.transpose();
      K.block(n + rows, 0, ne, n) = p.A;
      K.block(n + rows, n + rows, ne, ne) = -opt.regularization * MatrixXd::Identity(ne, ne);
    }
    const Eigen::PartialPivLU<MatrixXd> lu(K);

    auto direction = [&](const VectorXd& rc, VectorXd& dxi, VectorXd& dz, VectorXd& ds, VectorXd& dy) {
      VectorXd rhs(dim);
      rhs.head(n) = -rd;
      rhs.segment(n, rows) = rp - rc.cwiseQuotient(x.z);
      if (ne > 0) rhs.tail(ne) = -re;
      const VectorXd d = lu.solve(rhs);
      dxi = d.head(n);
      dz = d.segment(n, rows);
      dy = d.tail(ne);
      ds = -(rc + x.s.cwiseProduct(dz)).cwiseQuotient(x.z);
    };

    VectorXd dxi, dz, ds, dy;
    direction(x.s.cwiseProduct(x.z), dxi, dz, ds, dy);
    if (!dxi.allFinite() || !dz.allFinite()) throw NumericalFailure("LCP interior point: singular Newton system");
    const double a_aff = std::min(detail::max_step(x.s, ds), detail::max_step(x.z, dz));
    const double mu_aff = (x.s + a_aff * ds).dot(x.z + a_aff * dz) / rows;
    const double sigma = std::pow(mu_aff / mu, 3);
    const VectorXd rc = x.s.cwiseProduct(x.z) + ds.cwiseProduct(dz) - VectorXd::Constant(rows, sigma * mu);
    direction(rc, dxi, dz, ds, dy);
    if (!dxi.allFinite() || !dz.allFinite()) throw NumericalFailure("LCP interior point: singular Newton system");
    const double alpha = std::min(1.0, 0.99 * std::min(detail::max_step(x.s, ds), detail::max_step(x.z, dz)));
    x.xi += alpha * dxi;
    x.z += alpha * dz;
    x.s += alpha * ds;
    x.y += alpha * dy;
  }
  x.residuals = detail::lcp_residuals(p, x);
  for (int i = 0; i < rows; ++i) x.active[i] = x.z(i) > x.s(i) ? 1 : 0;

  if (opt.polish && rows > 0) {
    LcpSolution polished;
    if (solve_lcp_active_set(p, x.active, polished)) {
      const double ftol = 1e-9;
      const bool feasible = polished.s.minCoeff() >= -ftol && polished.z.minCoeff() >= -ftol &&
                            polished.residuals.dual <= 1e-8 * scale && polished.residuals.primal <= 1e-8 * scale;
      if (feasible) {
        polished.iterations = x.iterations;
        return polished;
      }
    }
  }
  return x;
}

}  // namespace physekf
