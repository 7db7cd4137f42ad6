#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "doorsim/worldgen.hpp"

namespace doorsim {

using Vec3 = std::array<double, 3>;

enum class ArmType { FloatingHook, FloatingGripper };

std::string_view to_string(ArmType a);
ArmType parse_arm_type(std::string_view s);

/// 6 for the hook (x, y, z, roll, pitch, yaw); the gripper adds aperture g.
constexpr std::size_t arm_dof(ArmType a) { return a == ArmType::FloatingHook ? 6 : 7; }

/// Calibration constants of the analytic door/knob/end-effector model. The
/// scaling factors stored in a WorldSpec are multiplied by the matching
/// base constant to obtain SI coefficients.
struct DynamicsConstants {
  double frame_damp_base = 100.0;   // N*m*s/rad
  double frame_spring_base = 10.0;  // N*m/rad
  double frame_fric_base = 5.0;     // N*m
  double knob_damp_base = 1.0;
  double knob_spring_base = 2.0;
  double knob_fric_base = 0.5;
  double robot_lin_damp_base = 200.0;  // N*s/m
  double robot_rot_damp_base = 50.0;   // N*m*s/rad

  double ee_mass = 2.0;           // kg
  double ee_inertia = 0.05;       // kg*m^2
  double force_limit = 80.0;      // N
  double torque_limit = 20.0;     // N*m
  double aperture_rate = 2.0;     // 1/s at |u| = 1
  double knob_mech_inertia = 0.01;  // kg*m^2, latch spindle added to knob inertia

  double attach_radius = 0.04;        // m
  double attach_orientation = 0.5;    // rad
  double grip_close_threshold = 0.3;  // engage below
  double grip_open_threshold = 0.7;   // release above
  double contact_stiffness = 5000.0;  // N/m
  double contact_damping = 200.0;     // N*s/m
  double twist_stiffness = 5.0;       // N*m/rad, end-effector roll to knob
  double twist_damping = 0.05;        // N*m*s/rad
  double grip_torque_cap = 2.0;       // N*m, axial torque the grasp can carry
  double push_contact_depth = 0.2;    // m, penetration band of the panel

  double unlatch_fraction = 0.9;
  double ajar_angle = 0.05;  // rad
  double lever_length = 0.12;
  double round_radius = 0.035;
  double hook_round_transfer = 0.1;
  double hook_lever_transfer = 1.0;

  double control_dt = 0.02;
  int substeps = 10;
};

/// Dynamic state. Door angle phi and knob angle psi are opening-positive.
struct SimState {
  ArmType arm = ArmType::FloatingHook;
  std::vector<double> q;
  std::vector<double> qdot;
  double phi = 0.0;
  double phi_dot = 0.0;
  double psi = 0.0;
  double psi_dot = 0.0;
  bool latched = false;
  bool attached = false;
  double t = 0.0;
  std::int64_t ticks = 0;
  double phi_max_reached = 0.0;
  /// Roll minus psi at the moment of attachment; the twist coupling pulls
  /// toward keeping this offset.
  double twist_ref = 0.0;

  bool operator==(const SimState&) const = default;
};

struct EndEffectorPose {
  Vec3 position;
  Vec3 approach_axis;  // unit
};

/// Door geometry resolved from a WorldSpec: the door frame rotates about a
/// vertical hinge axis, knob and panel points rotate with it.
struct DoorFrame {
  Vec3 hinge;        // point on the hinge axis at floor height
  double side = 1;   // +1: knob at larger y than hinge (left hinge), -1 otherwise
  double swing = 1;  // +1: pull door (opens toward +x), -1: push
  double knob_arm;   // horizontal distance hinge -> knob center
  double kappa() const { return -side * swing; }
};

DoorFrame door_frame(const WorldSpec& w);

/// Rotation about world z by the door angle, applied to a vector.
Vec3 door_rotate(const DoorFrame& f, double phi, const Vec3& v);

SimState init_state(const WorldSpec& world, std::uint64_t episode_seed,
                    ArmType arm = ArmType::FloatingHook);

/// Advances one control tick (constants.control_dt) via constants.substeps
/// substeps. Throws NumericalBlowup on non-finite state or force.
SimState step_physics(const WorldSpec& world, const SimState& state, std::span<const double> control,
                      const DynamicsConstants& c = {});

EndEffectorPose end_effector_pose(const SimState& state);

/// World rotation R = Rz(yaw) * Ry(pitch) * Rx(roll), row-major.
std::array<double, 9> euler_rotation(double roll, double pitch, double yaw);

Vec3 knob_center(const WorldSpec& world, const SimState& state);

/// Lever: handle tip; other knobs: knob center.
Vec3 knob_grasp_point(const WorldSpec& world, const SimState& state,
                      const DynamicsConstants& c = {});

/// Outward door normal at the knob (points toward the robot side).
Vec3 door_normal(const WorldSpec& world, double phi);

/// Angle in [0, pi] between the approach axis and the inward door normal.
double orientation_error(const WorldSpec& world, const SimState& state);

/// Door + knob kinetic energy plus spring potential, SI units.
double mechanism_energy(const WorldSpec& world, const SimState& state,
                        const DynamicsConstants& c = {});

double door_inertia(const WorldSpec& world);
double knob_inertia(const WorldSpec& world, const DynamicsConstants& c = {});

/// Torque-transfer factor from the attached end effector to the knob.
double knob_transfer_factor(const WorldSpec& world, ArmType arm, const DynamicsConstants& c = {});

/// Coefficients of one hinge or knob joint in SI units.
struct JointCoefficients {
  double damping;
  double spring;
  double friction;
};
JointCoefficients door_joint(const WorldSpec& world, const DynamicsConstants& c = {});
JointCoefficients knob_joint(const WorldSpec& world, const DynamicsConstants& c = {});

/// One implicit spring-damper step with Coulomb friction for a 1-DoF joint:
/// solves I(v'-v) = h(tau - k x' - c v' - f sgn(v')), x' = x + h v'.
/// Dissipative for any step size.
void joint_substep(double& x, double& v, double inertia, const JointCoefficients& jc, double tau,
                   double h);

}  // namespace doorsim
