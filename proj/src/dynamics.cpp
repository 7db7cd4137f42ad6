#include "doorsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "doorsim/errors.hpp"
#include "doorsim/rng.hpp"

namespace doorsim {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

void check_finite(double v, const char* what, const WorldSpec& w) {
  if (!std::isfinite(v)) throw NumericalBlowup(what, "world " + w.world_id);
}

/// Knob-relative offset of the lever handle tip in the closed-door frame.
Vec3 lever_offset(const DoorFrame& f, double psi, double length) {
  return {0.0, -f.side * length * std::cos(psi), -length * std::sin(psi)};
}

/// d(lever_offset)/d(psi), closed-door frame.
Vec3 lever_offset_dpsi(const DoorFrame& f, double psi, double length) {
  return {0.0, f.side * length * std::sin(psi), -length * std::cos(psi)};
}

Vec3 knob_local(const WorldSpec& w, const DoorFrame& f) {
  return {0.0, f.side * f.knob_arm, w.knob_height_m};
}

struct GraspKinematics {
  Vec3 point;
  Vec3 velocity;
  Vec3 dpoint_dpsi;  // zero for non-lever knobs
};

GraspKinematics grasp_kinematics(const WorldSpec& w, const DoorFrame& f, const SimState& s,
                                 const DynamicsConstants& c) {
  Vec3 local = knob_local(w, f);
  Vec3 dpsi{0.0, 0.0, 0.0};
  if (w.knob_type == KnobType::Lever) {
    local = add(local, lever_offset(f, s.psi, c.lever_length));
    dpsi = door_rotate(f, s.phi, lever_offset_dpsi(f, s.psi, c.lever_length));
  }
  const Vec3 rel = door_rotate(f, s.phi, local);
  const Vec3 point = add(f.hinge, rel);
  // Rigid rotation about the hinge axis at rate kappa * phi_dot, plus handle rotation.
  const Vec3 omega{0.0, 0.0, f.kappa() * s.phi_dot};
  const Vec3 velocity = add(cross(omega, rel), scale(dpsi, s.psi_dot));
  return {point, velocity, dpsi};
}

/// Generalized door torque of a force applied at a world point.
double door_torque(const DoorFrame& f, const Vec3& at, const Vec3& force) {
  return f.kappa() * cross(sub(at, f.hinge), force)[2];
}

}  // namespace

std::string_view to_string(ArmType a) {
  return a == ArmType::FloatingHook ? "hook" : "gripper";
}

ArmType parse_arm_type(std::string_view s) {
  if (s == "hook" || s == "floating_hook") return ArmType::FloatingHook;
  if (s == "gripper" || s == "floating_gripper") return ArmType::FloatingGripper;
  throw SchemaError("arm", "unknown arm type '" + std::string(s) + "'");
}

DoorFrame door_frame(const WorldSpec& w) {
  DoorFrame f;
  f.side = w.hinge_side == HingeSide::Left ? 1.0 : -1.0;
  f.swing = w.open_direction == OpenDirection::Pull ? 1.0 : -1.0;
  f.hinge = {0.0, w.wall_offset_y_m - f.side * w.door_width_m / 2.0, 0.0};
  f.knob_arm = (1.0 - w.knob_edge_ratio) * w.door_width_m;
  return f;
}

Vec3 door_rotate(const DoorFrame& f, double phi, const Vec3& v) {
  const double a = f.kappa() * phi;
  const double ca = std::cos(a);
  const double sa = std::sin(a);
  return {ca * v[0] - sa * v[1], sa * v[0] + ca * v[1], v[2]};
}

std::array<double, 9> euler_rotation(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  return {cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
          sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
          -sp,     cp * sr,                cp * cr};
}

EndEffectorPose end_effector_pose(const SimState& s) {
  const auto r = euler_rotation(s.q[3], s.q[4], s.q[5]);
  // Body -x axis in world coordinates.
  return {{s.q[0], s.q[1], s.q[2]}, {-r[0], -r[3], -r[6]}};
}

Vec3 knob_center(const WorldSpec& w, const SimState& s) {
  const DoorFrame f = door_frame(w);
  return add(f.hinge, door_rotate(f, s.phi, knob_local(w, f)));
}

Vec3 knob_grasp_point(const WorldSpec& w, const SimState& s, const DynamicsConstants& c) {
  return grasp_kinematics(w, door_frame(w), s, c).point;
}

Vec3 door_normal(const WorldSpec& w, double phi) {
  return door_rotate(door_frame(w), phi, {1.0, 0.0, 0.0});
}

double orientation_error(const WorldSpec& w, const SimState& s) {
  const Vec3 axis = end_effector_pose(s).approach_axis;
  const Vec3 ideal = scale(door_normal(w, s.phi), -1.0);
  return std::atan2(norm(cross(axis, ideal)), dot(axis, ideal));
}

double door_inertia(const WorldSpec& w) {
  return w.door_mass_kg * w.door_width_m * w.door_width_m / 3.0;
}

double knob_inertia(const WorldSpec& w, const DynamicsConstants& c) {
  switch (w.knob_type) {
    case KnobType::Lever:
      return w.knob_mass_kg * c.lever_length * c.lever_length / 3.0 + c.knob_mech_inertia;
    case KnobType::Round:
      return 0.5 * w.knob_mass_kg * c.round_radius * c.round_radius + c.knob_mech_inertia;
    case KnobType::Pull:
      break;
  }
  return c.knob_mech_inertia;
}

double knob_transfer_factor(const WorldSpec& w, ArmType arm, const DynamicsConstants& c) {
  if (arm == ArmType::FloatingGripper) return w.knob_surface_friction;
  return w.knob_type == KnobType::Round ? c.hook_round_transfer : c.hook_lever_transfer;
}

JointCoefficients door_joint(const WorldSpec& w, const DynamicsConstants& c) {
  return {w.frame_damper * c.frame_damp_base, w.frame_spring * c.frame_spring_base,
          w.frame_frictionloss * c.frame_fric_base};
}

JointCoefficients knob_joint(const WorldSpec& w, const DynamicsConstants& c) {
  return {w.knob_damper * c.knob_damp_base, w.knob_spring * c.knob_spring_base,
          w.knob_frictionloss * c.knob_fric_base};
}

double mechanism_energy(const WorldSpec& w, const SimState& s, const DynamicsConstants& c) {
  const auto dj = door_joint(w, c);
  double e = 0.5 * door_inertia(w) * s.phi_dot * s.phi_dot + 0.5 * dj.spring * s.phi * s.phi;
  if (w.knob_type != KnobType::Pull) {
    const auto kj = knob_joint(w, c);
    e += 0.5 * knob_inertia(w, c) * s.psi_dot * s.psi_dot + 0.5 * kj.spring * s.psi * s.psi;
  }
  return e;
}

void joint_substep(double& x, double& v, double inertia, const JointCoefficients& jc, double tau,
                   double h) {
  const double denom = inertia + h * jc.damping + h * h * jc.spring;
  const double v_free = (inertia * v + h * tau - h * jc.spring * x) / denom;
  const double stick = h * jc.friction / denom;
  double v_next = 0.0;
  if (v_free > stick) {
    v_next = v_free - stick;
  } else if (v_free < -stick) {
    v_next = v_free + stick;
  }
  v = v_next;
  x += h * v_next;
}

SimState init_state(const WorldSpec& w, std::uint64_t episode_seed, ArmType arm) {
  Rng rng(derive_seed(w.rng_seed, episode_seed));
  const Vec3 knob = knob_center(w, SimState{});
  SimState s;
  s.arm = arm;
  s.q.assign(arm_dof(arm), 0.0);
  s.qdot.assign(arm_dof(arm), 0.0);
  s.q[0] = rng.uniform(0.6, 1.2);
  s.q[1] = knob[1] + rng.uniform(-0.4, 0.4);
  s.q[2] = rng.uniform(0.8, 1.2);
  for (int i = 3; i < 6; ++i) s.q[i] = rng.uniform(-0.3, 0.3);
  if (arm == ArmType::FloatingGripper) s.q[6] = 1.0;
  s.latched = w.knob_type != KnobType::Pull;
  return s;
}

SimState step_physics(const WorldSpec& w, const SimState& state, std::span<const double> control,
                      const DynamicsConstants& c) {
  const std::size_t dof = arm_dof(state.arm);
  if (control.size() != dof || state.q.size() != dof || state.qdot.size() != dof) {
    throw ContractViolation("step_physics: control/state dimension does not match arm dof " +
                            std::to_string(dof));
  }
  std::array<double, 7> u{};
  for (std::size_t i = 0; i < dof; ++i) {
    check_finite(control[i], "control", w);
    u[i] = std::clamp(control[i], -1.0, 1.0);
  }

  const DoorFrame f = door_frame(w);
  const double h = c.control_dt / c.substeps;
  const double lin_damp = w.robot_joint_damping * c.robot_lin_damp_base;
  const double rot_damp = w.robot_joint_damping * c.robot_rot_damp_base;
  const double i_door = door_inertia(w);
  const double i_knob = knob_inertia(w, c);
  const JointCoefficients dj = door_joint(w, c);
  const JointCoefficients kj = knob_joint(w, c);
  const double transfer = knob_transfer_factor(w, state.arm, c);
  const bool has_knob_joint = w.knob_type != KnobType::Pull;
  const bool hook = state.arm == ArmType::FloatingHook;

  SimState s = state;
  for (int k = 0; k < c.substeps; ++k) {
    const Vec3 tip{s.q[0], s.q[1], s.q[2]};
    const Vec3 tip_vel{s.qdot[0], s.qdot[1], s.qdot[2]};
    Vec3 tip_force{0.0, 0.0, 0.0};
    double roll_torque = 0.0;
    double tau_door = 0.0;
    double tau_knob = 0.0;

    if (s.attached) {
      const GraspKinematics g = grasp_kinematics(w, f, s, c);
      const Vec3 pull = add(scale(sub(g.point, tip), c.contact_stiffness),
                            scale(sub(g.velocity, tip_vel), c.contact_damping));
      tip_force = add(tip_force, pull);
      const Vec3 on_knob = scale(pull, -1.0);
      tau_door += door_torque(f, g.point, on_knob);
      if (w.knob_type == KnobType::Lever) {
        tau_knob += transfer * dot(on_knob, g.dpoint_dpsi);
      } else if (w.knob_type == KnobType::Round) {
        const double twist = c.twist_stiffness * (s.q[3] - s.psi - s.twist_ref) +
                             c.twist_damping * (s.qdot[3] - s.psi_dot);
        roll_torque -= twist;
        tau_knob += transfer * std::clamp(twist, -c.grip_torque_cap, c.grip_torque_cap);
      }
    }

    if (w.open_direction == OpenDirection::Push) {
      const Vec3 rel = sub(tip, f.hinge);
      // Closed-door frame coordinates of the tip.
      const double a = -f.kappa() * s.phi;
      const double lx = std::cos(a) * rel[0] - std::sin(a) * rel[1];
      const double ly = std::sin(a) * rel[0] + std::cos(a) * rel[1];
      const double lateral = f.side * ly;
      if (lx < 0.0 && lx > -c.push_contact_depth && lateral >= 0.0 &&
          lateral <= w.door_width_m && rel[2] >= 0.0 && rel[2] <= w.door_height_m) {
        const Vec3 n = door_rotate(f, s.phi, {1.0, 0.0, 0.0});
        const Vec3 surface_vel = cross({0.0, 0.0, f.kappa() * s.phi_dot}, rel);
        const double closing = dot(sub(tip_vel, surface_vel), n);
        const double fn = std::max(0.0, -c.contact_stiffness * lx - c.contact_damping * closing);
        const Vec3 push = scale(n, fn);
        tip_force = add(tip_force, push);
        tau_door += door_torque(f, tip, scale(push, -1.0));
      }
    }

    const bool gate_open =
        !s.latched || s.psi >= c.unlatch_fraction * w.knob_rot_range_rad;
    if (!gate_open) tau_door = 0.0;

    for (int i = 0; i < 3; ++i) {
      check_finite(tip_force[i], "contact force", w);
      const double acc = (u[i] * c.force_limit + tip_force[i] - lin_damp * s.qdot[i]) / c.ee_mass;
      s.qdot[i] += h * acc;
      s.q[i] += h * s.qdot[i];
    }
    for (int i = 3; i < 6; ++i) {
      const double extra = i == 3 ? roll_torque : 0.0;
      const double acc = (u[i] * c.torque_limit + extra - rot_damp * s.qdot[i]) / c.ee_inertia;
      s.qdot[i] += h * acc;
      s.q[i] += h * s.qdot[i];
    }
    if (!hook) {
      const double rate = u[6] * c.aperture_rate;
      const double g = std::clamp(s.q[6] + h * rate, 0.0, 1.0);
      s.qdot[6] = (g == 0.0 && rate < 0.0) || (g == 1.0 && rate > 0.0) ? 0.0 : rate;
      s.q[6] = g;
    }

    check_finite(tau_door, "door torque", w);
    check_finite(tau_knob, "knob torque", w);
    joint_substep(s.phi, s.phi_dot, i_door, dj, tau_door, h);
    if (s.phi <= 0.0) {
      s.phi = 0.0;
      s.phi_dot = std::max(0.0, s.phi_dot);
    } else if (s.phi >= kHalfPi) {
      s.phi = kHalfPi;
      s.phi_dot = std::min(0.0, s.phi_dot);
    }
    if (has_knob_joint) {
      joint_substep(s.psi, s.psi_dot, i_knob, kj, tau_knob, h);
      if (s.psi <= 0.0) {
        s.psi = 0.0;
        s.psi_dot = std::max(0.0, s.psi_dot);
      } else if (s.psi >= w.knob_rot_range_rad) {
        s.psi = w.knob_rot_range_rad;
        s.psi_dot = std::min(0.0, s.psi_dot);
      }
    }
    if (s.latched && s.phi > c.ajar_angle) s.latched = false;

    const Vec3 new_tip{s.q[0], s.q[1], s.q[2]};
    if (!s.attached) {
      const bool closed = hook || s.q[6] < c.grip_close_threshold;
      if (closed && norm(sub(knob_grasp_point(w, s, c), new_tip)) < c.attach_radius &&
          orientation_error(w, s) < c.attach_orientation) {
        s.attached = true;
        s.twist_ref = s.q[3] - s.psi;
      }
    } else if (!hook && s.q[6] > c.grip_open_threshold) {
      s.attached = false;
    }

    for (std::size_t i = 0; i < dof; ++i) {
      check_finite(s.q[i], "q", w);
      check_finite(s.qdot[i], "qdot", w);
    }
    check_finite(s.phi_dot, "phi_dot", w);
    check_finite(s.psi_dot, "psi_dot", w);
    s.phi_max_reached = std::max(s.phi_max_reached, s.phi);
  }
  s.ticks += 1;
  s.t = static_cast<double>(s.ticks) * c.control_dt;
  return s;
}

}  // namespace doorsim
