#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "doorsim/env.hpp"
#include "doorsim/oracle.hpp"

namespace doorsim {

/// Anything that maps the current environment observation to an action.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::vector<double> act(const DoorEnv& env, const Observation& obs) = 0;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

class OracleController final : public Controller {
 public:
  explicit OracleController(OracleGains gains = {}) : oracle_(gains) {}
  std::vector<double> act(const DoorEnv& env, const Observation&) override {
    return oracle_.act(env);
  }

 private:
  ScriptedOracle oracle_;
};

}  // namespace doorsim
