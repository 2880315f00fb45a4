#pragma once
// Run configuration: a flat key = value file with [section] headers.
//
//   # comment
//   task = pointmass
//   [train]
//   horizon = 32
//
// Keys outside a section are top-level; inside a section they are addressed
// as "section.key". Every key has a default; unknown or duplicate keys are
// rejected by name.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "algo.hpp"
#include "rigid.hpp"
#include "tasks.hpp"

namespace diffsim::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v +
                      "'");
  }
  if (pos != v.size())
    throw ConfigError("config key '" + key + "': trailing junk in '" + v + "'");
  return x;
}

inline int to_int(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x)
    throw ConfigError("config key '" + key + "': expected integer, got '" + v +
                      "'");
  return i;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" +
                      v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v +
                    "'");
}

inline std::vector<int> to_int_list(const std::string& key,
                                    const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int(key, item));
  }
  return out;
}

}  // namespace detail

// Raw parse into section-qualified keys; duplicates are an error.
inline std::map<std::string, std::string> parse_config_text(
    std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (!out.emplace(key, val).second)
      throw ConfigError("duplicate config key: " + key);
  }
  return out;
}

struct RunConfig {
  std::string task = "pointmass";
  std::uint64_t seed = 0;
  int checkpoint_every = 50;
  int eval_episodes = 16;
  bool eval_stochastic = false;
  algo::TrainConfig train{};
  rigid::ContactParams contact{};
  tasks::PointMassReach::Config pointmass{};
  tasks::MiniPendulum::Config pendulum{};
  tasks::MiniRollFlat::Config rollflat{};
  tasks::MiniJumper::Config jumper{};
  tasks::MiniFluidMove::Config fluidmove{};
};

inline void apply_key(RunConfig& c, const std::string& key,
                      const std::string& v) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_int;
  using detail::to_int_list;
  using detail::to_u64;
  auto& tr = c.train;
  // top level
  if (key == "task") {
    if (v != "pointmass" && v != "pendulum" && v != "rollflat" &&
        v != "jumper" && v != "fluidmove")
      throw ConfigError("config key 'task': unknown task '" + v + "'");
    c.task = v;
  } else if (key == "algorithm") {
    try {
      tr.algorithm = algo::parse_algorithm(v);
    } catch (const std::exception&) {
      throw ConfigError("config key 'algorithm': unknown algorithm '" + v +
                        "'");
    }
  } else if (key == "seed") {
    c.seed = to_u64(key, v);
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = to_int(key, v);
  } else if (key == "eval_episodes") {
    c.eval_episodes = to_int(key, v);
  } else if (key == "eval_stochastic") {
    c.eval_stochastic = to_bool(key, v);
  }
  // [train]
  else if (key == "train.n_envs") tr.n_envs = to_int(key, v);
  else if (key == "train.horizon") tr.returns.horizon = to_int(key, v);
  else if (key == "train.gamma") tr.returns.gamma = to_double(key, v);
  else if (key == "train.lambda") tr.returns.lambda = to_double(key, v);
  else if (key == "train.total_iterations") tr.total_iterations = to_int(key, v);
  else if (key == "train.actor_lr") tr.actor_lr = to_double(key, v);
  else if (key == "train.critic_lr") tr.critic_lr = to_double(key, v);
  else if (key == "train.alpha_lr") tr.alpha_lr = to_double(key, v);
  else if (key == "train.init_alpha") tr.init_alpha = to_double(key, v);
  else if (key == "train.n_critics") tr.n_critics = to_int(key, v);
  else if (key == "train.critic_passes") tr.critic_passes = to_int(key, v);
  else if (key == "train.beta1") tr.beta1 = to_double(key, v);
  else if (key == "train.beta2") tr.beta2 = to_double(key, v);
  else if (key == "train.clip_norm") tr.clip_norm = to_double(key, v);
  else if (key == "train.actor_hidden") tr.actor_hidden = to_int_list(key, v);
  else if (key == "train.critic_hidden") tr.critic_hidden = to_int_list(key, v);
  else if (key == "train.checkpoint_steps") tr.checkpoint_steps = to_bool(key, v);
  else if (key == "train.record_wall_time") tr.record_wall_time = to_bool(key, v);
  // [contact]
  else if (key == "contact.k_n") c.contact.k_n = to_double(key, v);
  else if (key == "contact.k_d") c.contact.k_d = to_double(key, v);
  else if (key == "contact.mu_f") c.contact.mu_f = to_double(key, v);
  else if (key == "contact.v_s") c.contact.v_s = to_double(key, v);
  // [pointmass]
  else if (key == "pointmass.dt") c.pointmass.dt = to_double(key, v);
  else if (key == "pointmass.start_x") c.pointmass.start_x = to_double(key, v);
  else if (key == "pointmass.start_y") c.pointmass.start_y = to_double(key, v);
  else if (key == "pointmass.spread") c.pointmass.spread = to_double(key, v);
  else if (key == "pointmass.episode_len") c.pointmass.episode_len = to_int(key, v);
  // [pendulum]
  else if (key == "pendulum.mass") c.pendulum.mass = to_double(key, v);
  else if (key == "pendulum.length") c.pendulum.length = to_double(key, v);
  else if (key == "pendulum.torque_max") c.pendulum.torque_max = to_double(key, v);
  else if (key == "pendulum.dt") c.pendulum.dt = to_double(key, v);
  else if (key == "pendulum.substeps") c.pendulum.substeps = to_int(key, v);
  else if (key == "pendulum.spread") c.pendulum.spread = to_double(key, v);
  else if (key == "pendulum.episode_len") c.pendulum.episode_len = to_int(key, v);
  // [rollflat]
  else if (key == "rollflat.grid_n") c.rollflat.grid_n = to_int(key, v);
  else if (key == "rollflat.ppc") c.rollflat.ppc = to_int(key, v);
  else if (key == "rollflat.block_size") c.rollflat.block_size = to_double(key, v);
  else if (key == "rollflat.block_height") c.rollflat.block_height = to_double(key, v);
  else if (key == "rollflat.roller_radius") c.rollflat.roller_radius = to_double(key, v);
  else if (key == "rollflat.roller_speed") c.rollflat.roller_speed = to_double(key, v);
  else if (key == "rollflat.dt") c.rollflat.dt = to_double(key, v);
  else if (key == "rollflat.substeps") c.rollflat.substeps = to_int(key, v);
  else if (key == "rollflat.h_flat") c.rollflat.h_flat = to_double(key, v);
  else if (key == "rollflat.cloud_k") c.rollflat.cloud_k = to_int(key, v);
  else if (key == "rollflat.episode_len") c.rollflat.episode_len = to_int(key, v);
  else if (key == "rollflat.youngs") c.rollflat.youngs = to_double(key, v);
  else if (key == "rollflat.yield_stress") c.rollflat.yield_stress = to_double(key, v);
  // [jumper]
  else if (key == "jumper.size_x") c.jumper.size_x = to_double(key, v);
  else if (key == "jumper.size_y") c.jumper.size_y = to_double(key, v);
  else if (key == "jumper.size_z") c.jumper.size_z = to_double(key, v);
  else if (key == "jumper.res_x") c.jumper.res_x = to_int(key, v);
  else if (key == "jumper.res_y") c.jumper.res_y = to_int(key, v);
  else if (key == "jumper.res_z") c.jumper.res_z = to_int(key, v);
  else if (key == "jumper.density") c.jumper.density = to_double(key, v);
  else if (key == "jumper.lambda") c.jumper.lambda = to_double(key, v);
  else if (key == "jumper.mu") c.jumper.mu = to_double(key, v);
  else if (key == "jumper.dt") c.jumper.dt = to_double(key, v);
  else if (key == "jumper.substeps") c.jumper.substeps = to_int(key, v);
  else if (key == "jumper.spread") c.jumper.spread = to_double(key, v);
  else if (key == "jumper.episode_len") c.jumper.episode_len = to_int(key, v);
  // [fluidmove]
  else if (key == "fluidmove.grid_n") c.fluidmove.grid_n = to_int(key, v);
  else if (key == "fluidmove.ppc") c.fluidmove.ppc = to_int(key, v);
  else if (key == "fluidmove.container_half") c.fluidmove.container_half = to_double(key, v);
  else if (key == "fluidmove.fill") c.fluidmove.fill = to_double(key, v);
  else if (key == "fluidmove.speed") c.fluidmove.speed = to_double(key, v);
  else if (key == "fluidmove.dt") c.fluidmove.dt = to_double(key, v);
  else if (key == "fluidmove.substeps") c.fluidmove.substeps = to_int(key, v);
  else if (key == "fluidmove.start_x") c.fluidmove.start_x = to_double(key, v);
  else if (key == "fluidmove.start_y") c.fluidmove.start_y = to_double(key, v);
  else if (key == "fluidmove.target_x") c.fluidmove.target_x = to_double(key, v);
  else if (key == "fluidmove.target_y") c.fluidmove.target_y = to_double(key, v);
  else if (key == "fluidmove.spill_temp") c.fluidmove.spill_temp = to_double(key, v);
  else if (key == "fluidmove.cloud_k") c.fluidmove.cloud_k = to_int(key, v);
  else if (key == "fluidmove.episode_len") c.fluidmove.episode_len = to_int(key, v);
  else {
    throw ConfigError("unknown config key: " + key);
  }
}

inline RunConfig make_run_config(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  for (const auto& [k, v] : kv) apply_key(c, k, v);
  c.jumper.contact = c.contact;
  c.train.validate();
  if (c.checkpoint_every < 1)
    throw ConfigError("config key 'checkpoint_every': must be >= 1");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return make_run_config(parse_config_text(in));
}

}  // namespace diffsim::config
