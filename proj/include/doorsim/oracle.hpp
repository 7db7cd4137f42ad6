#pragma once

#include <vector>

#include "doorsim/env.hpp"

namespace doorsim {

/// Gains of the scripted staged controller. Position gains act on meters,
/// rotation gains on radians; outputs are normalized actions in [-1, 1].
struct OracleGains {
  double pos_kp = 6.0;
  double pos_kd = 0.4;
  double rot_kp = 2.0;
  double rot_kd = 0.1;
  double grip_distance = 0.02;   // close the gripper inside this radius (m)
  double turn_lead = 0.10;       // lever: target offset along the handle tangent (m)
  double open_lead = 0.15;       // target offset along the door tangent (m)
  double turn_margin = 1.02;     // keep turning until psi >= margin * unlatch angle
};

/// Closed-loop staged controller used to certify that worlds are solvable
/// without learning: servo to the (estimated) knob, align, engage, turn the
/// knob past the latch angle when needed, then drive the door along its
/// opening tangent. Reads the same knob estimate the policy sees plus
/// proprioception and joint angles from the environment.
class ScriptedOracle {
 public:
  explicit ScriptedOracle(OracleGains gains = {}) : gains_(gains) {}

  std::vector<double> act(const DoorEnv& env) const;

 private:
  OracleGains gains_;
};

}  // namespace doorsim
