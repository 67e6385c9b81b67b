#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simground/csv.hpp"
#include "simground/env.hpp"
#include "simground/gridworld.hpp"
#include "simground/pendulum.hpp"

namespace simground {

/// Builds an environment pair from its config document, e.g.
///   {"env": "pendulum", "property": "mass", "default": 4.89,
///    "modified": 100.0, "dt": 0.02, "horizon": 200}
///   {"env": "gridworld", "property": "slip", "default": 0.0,
///    "modified": 0.3, "size": 4}
inline EnvironmentPair pair_from_json(const nlohmann::json& j) {
  const std::string env = j.at("env").get<std::string>();
  const double def = j.at("default").get<double>();
  const double mod = j.at("modified").get<double>();
  if (env == "pendulum") {
    if (j.at("property").get<std::string>() != "mass")
      throw std::invalid_argument("pendulum pair: only the mass property is modifiable");
    return make_pendulum_pair(def, mod, j.value("dt", 0.02), j.value("horizon", 200));
  }
  if (env == "gridworld") {
    if (j.at("property").get<std::string>() != "slip")
      throw std::invalid_argument("gridworld pair: only the slip property is modifiable");
    GridworldParams params;
    params.size = j.value("size", 4);
    params.gamma = j.value("gamma", 0.95);
    params.horizon = j.value("horizon", 0);
    return make_gridworld_pair(params.size, def, mod, j.value("seed", 0), params);
  }
  throw std::invalid_argument("pair_from_json: unknown env '" + env + "'");
}

inline nlohmann::json pair_config_json(const std::string& env, const std::string& property,
                                       double def, double mod) {
  return {{"env", env}, {"property", property}, {"default", def}, {"modified", mod}};
}

inline void trajectories_to_csv(const std::string& path,
                                const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("trajectories_to_csv: nothing to write");
  const auto& first = trajectories.front().records.front();
  std::vector<std::string> head{"step"};
  for (int i = 0; i < first.state.size(); ++i) head.push_back("state_" + std::to_string(i));
  for (int i = 0; i < first.action.size(); ++i) head.push_back("action_" + std::to_string(i));
  for (int i = 0; i < first.state.size(); ++i)
    head.push_back("next_state_" + std::to_string(i));
  head.push_back("reward");
  head.push_back("done");
  CsvWriter w(path);
  w.header(head);
  for (const auto& traj : trajectories) {
    int step = 0;
    for (const auto& rec : traj.records) {
      std::vector<std::string> cells{std::to_string(step++)};
      for (int i = 0; i < rec.state.size(); ++i) cells.push_back(format_double(rec.state[i]));
      for (int i = 0; i < rec.action.size(); ++i) cells.push_back(format_double(rec.action[i]));
      for (int i = 0; i < rec.next_state.size(); ++i)
        cells.push_back(format_double(rec.next_state[i]));
      cells.push_back(format_double(rec.reward));
      cells.push_back(rec.done ? "1" : "0");
      w.row(cells);
    }
  }
}

/// Inverse of trajectories_to_csv; episode boundaries are where the step
/// counter restarts at zero.
inline std::vector<Trajectory> trajectories_from_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  int state_dim = 0, action_dim = 0;
  for (const auto& name : table.header) {
    if (name.rfind("state_", 0) == 0) ++state_dim;
    if (name.rfind("action_", 0) == 0) ++action_dim;
  }
  if (state_dim == 0 || action_dim == 0)
    throw std::runtime_error("trajectories_from_csv: malformed header in " + path);
  std::vector<Trajectory> out;
  for (const auto& row : table.rows) {
    const int step = std::stoi(row[0]);
    if (step == 0) out.emplace_back();
    TransitionRecord rec;
    int c = 1;
    rec.state.resize(state_dim);
    for (int i = 0; i < state_dim; ++i) rec.state[i] = std::stod(row[c++]);
    rec.action.resize(action_dim);
    for (int i = 0; i < action_dim; ++i) rec.action[i] = std::stod(row[c++]);
    rec.next_state.resize(state_dim);
    for (int i = 0; i < state_dim; ++i) rec.next_state[i] = std::stod(row[c++]);
    rec.reward = std::stod(row[c++]);
    rec.done = row[c] == "1";
    out.back().records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace simground
