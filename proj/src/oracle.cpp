#include "doorsim/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace doorsim {

namespace {

double wrap_angle(double a) { return std::remainder(a, 2.0 * 3.14159265358979323846); }

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n == 0.0) return {0.0, 0.0, 0.0};
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

std::vector<double> ScriptedOracle::act(const DoorEnv& env) const {
  const WorldSpec& w = env.world();
  const SimState& s = env.state();
  const DynamicsConstants& c = env.constants();
  const DoorFrame f = door_frame(w);
  const bool gripper = s.arm == ArmType::FloatingGripper;
  std::vector<double> u(arm_dof(s.arm), 0.0);

  const Vec3 est = env.knob_estimate();
  Vec3 target = est;
  double roll_target = 0.0;
  bool twist = false;

  const double unlatch = c.unlatch_fraction * w.knob_rot_range_rad;
  if (s.attached) {
    const bool turning = s.latched && w.knob_type != KnobType::Pull;
    if (turning && w.knob_type == KnobType::Lever) {
      // d(grasp)/d(psi) in world coordinates.
      const double sp = std::sin(s.psi), cp = std::cos(s.psi);
      const Vec3 tangent =
          normalized(door_rotate(f, s.phi, {0.0, f.side * sp, -cp}));
      for (int i = 0; i < 3; ++i) target[i] += gains_.turn_lead * tangent[i];
    }
    if (turning && w.knob_type == KnobType::Round) twist = true;
    if (!turning || s.psi >= gains_.turn_margin * unlatch) {
      const Vec3 rel{est[0] - f.hinge[0], est[1] - f.hinge[1], 0.0};
      const Vec3 open = normalized({-f.kappa() * rel[1], f.kappa() * rel[0], 0.0});
      for (int i = 0; i < 3; ++i) target[i] += gains_.open_lead * open[i];
    }
  }

  for (int i = 0; i < 3; ++i) {
    u[i] = gains_.pos_kp * (target[i] - s.q[i]) - gains_.pos_kd * s.qdot[i];
  }
  // Approach axis -n(phi) corresponds to yaw = kappa * phi, pitch = roll = 0.
  const double yaw_target = f.kappa() * s.phi;
  u[3] = twist ? 1.0 : gains_.rot_kp * wrap_angle(roll_target - s.q[3]) - gains_.rot_kd * s.qdot[3];
  u[4] = gains_.rot_kp * wrap_angle(0.0 - s.q[4]) - gains_.rot_kd * s.qdot[4];
  u[5] = gains_.rot_kp * wrap_angle(yaw_target - s.q[5]) - gains_.rot_kd * s.qdot[5];
  if (gripper) {
    const double dx = est[0] - s.q[0], dy = est[1] - s.q[1], dz = est[2] - s.q[2];
    const bool close = s.attached || std::sqrt(dx * dx + dy * dy + dz * dz) < gains_.grip_distance;
    u[6] = close ? -1.0 : 1.0;
  }
  for (auto& x : u) x = std::clamp(x, -1.0, 1.0);
  return u;
}

}  // namespace doorsim
