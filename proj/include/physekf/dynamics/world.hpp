#pragma once

#include <optional>
#include <string>
#include <vector>

#include "physekf/dynamics/lcp.hpp"

namespace physekf {

struct StepParams {
  ContactParams contact;
  double margin = 1e-3;
  double max_depth = 0.05;  // deeper contacts abort the step
  IpmOptions ipm;
};

struct World {
  std::vector<RigidBody> bodies;
  std::vector<Plane> planes;
  StepParams params;
};

/// Contacts and LCP active set of one step; replaying them at a nearby state
/// gives a smooth map (used for finite-difference Jacobians).
struct StepRecord {
  std::vector<Contact> contacts;
  LcpSolution solution;
};

/// Semi-implicit Euler: position with the post-step velocity, rotation by left multiplication.
inline Pose integrate_pose(const Pose& pose, const Twist& next, double dt) {
  return {pose.p + dt * next.v, perturb_left(pose.R, dt * next.w)};
}

inline std::vector<double> contact_frictions(const World& w, const std::vector<Contact>& contacts) {
  std::vector<double> mu;
  mu.reserve(contacts.size());
  for (const auto& c : contacts) mu.push_back(contact_friction(w.bodies, w.planes, c));
  return mu;
}

namespace detail {

inline void apply_solution(World& w, const LcpSolution& sol, double dt) {
  for (int i = 0; i < static_cast<int>(w.bodies.size()); ++i) {
    RigidBody& b = w.bodies[i];
    b.twist = sol.twist(i);
    b.pose = integrate_pose(b.pose, b.twist, dt);
  }
}

inline void check_depths(const World& w, const std::vector<Contact>& contacts) {
  for (const auto& c : contacts) {
    if (c.depth > w.params.max_depth) {
      throw NumericalFailure("contact depth " + std::to_string(c.depth) + " exceeds tunneling guard");
    }
  }
}

}  // namespace detail

/// Advances all bodies by dt: contacts, LCP assembly, interior-point solve, integration.
inline StepRecord step(World& w, double dt) {
  StepRecord rec;
  rec.contacts = generate_contacts(w.bodies, w.planes, w.params.margin);
  detail::check_depths(w, rec.contacts);
  const std::vector<double> mu = contact_frictions(w, rec.contacts);
  const LcpProblem lcp = assemble_lcp(w.bodies, rec.contacts, mu, dt, w.params.contact);
  rec.solution = solve_lcp(lcp, w.params.ipm);
  detail::apply_solution(w, rec.solution, dt);
  return rec;
}

/// Steps with the contact features of `frozen` re-evaluated at the current
/// state. With `reuse_active_set` the LCP is solved on the recorded active set
/// (falls back to the interior point when that system is inconsistent).
inline void step_frozen(World& w, double dt, const StepRecord& frozen, bool reuse_active_set) {
  std::vector<Contact> contacts = frozen.contacts;
  for (auto& c : contacts) refresh_contact(w.bodies, w.planes, c);
  const std::vector<double> mu = contact_frictions(w, contacts);
  const LcpProblem lcp = assemble_lcp(w.bodies, contacts, mu, dt, w.params.contact);
  LcpSolution sol;
  if (!(reuse_active_set && frozen.solution.polished && solve_lcp_active_set(lcp, frozen.solution.active, sol))) {
    sol = solve_lcp(lcp, w.params.ipm);
  }
  detail::apply_solution(w, sol, dt);
}

inline double kinetic_energy(const World& w) {
  double e = 0.0;
  for (const auto& b : w.bodies) {
    e += 0.5 * b.mass * b.twist.v.squaredNorm() + 0.5 * b.twist.w.dot(b.inertia_world() * b.twist.w);
  }
  return e;
}

}  // namespace physekf
