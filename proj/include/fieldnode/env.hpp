#pragma once

// Desk-scale continuous-control environments whose observations are split
// into named fields. Two dynamics families, each with two tasks that share
// the transition function and differ only in reward:
//
//   pendulum  fields angle=[cos th, sin th], velocity=[th']; action: torque
//             th is measured from the upright position, so th = 0 is the
//             (unstable) balance point and the episode starts hanging down.
//             tasks: balance  r = clip(1 - |th|/pi, 0, 1)
//                    swingup  r = (1 + cos th) / 2
//   chain     3 unit masses in 1-D, tethered to the origin and to each other
//             by springs; fields pos{i}, vel{i}; action: one force per mass
//             tasks: hold    r = clip(1 - mean|x_i|, 0, 1)
//                    travel  r = clip(1 - |mean x_i - 1|, 0, 1)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fieldnode/errors.hpp"

namespace fieldnode {

struct FieldSpec {
  std::string name;
  int dim = 0;

  bool operator==(const FieldSpec&) const = default;
};

using FieldSchema = std::vector<FieldSpec>;

inline int flat_dim(const FieldSchema& schema) {
  int d = 0;
  for (const auto& f : schema) d += f.dim;
  return d;
}

struct EnvSpec {
  std::string family;
  std::string task;  // reward_id
  FieldSchema field_schema;
  int action_dim = 0;
  int episode_length = 200;

  [[nodiscard]] std::string name() const { return family + "/" + task; }
  [[nodiscard]] int obs_dim() const { return flat_dim(field_schema); }
  [[nodiscard]] bool same_family(const EnvSpec& o) const {
    return family == o.family && field_schema == o.field_schema && action_dim == o.action_dim;
  }
};

// Values keyed by field name, in schema order.
struct FieldObservation {
  std::vector<std::pair<std::string, std::vector<double>>> values;
  long timestamp = 0;

  [[nodiscard]] std::vector<double> flat() const {
    std::vector<double> out;
    for (const auto& [_, v] : values) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  [[nodiscard]] const std::vector<double>& field(const std::string& name) const {
    for (const auto& [n, v] : values)
      if (n == name) return v;
    throw ShapeError("observation has no field '" + name + "'");
  }

  bool operator==(const FieldObservation&) const = default;
};

inline FieldObservation make_observation(const FieldSchema& schema, const std::vector<double>& flat, long t) {
  require_shape(static_cast<int>(flat.size()) == flat_dim(schema), "observation size does not match schema");
  FieldObservation obs;
  obs.timestamp = t;
  std::size_t off = 0;
  for (const auto& f : schema) {
    obs.values.emplace_back(f.name, std::vector<double>(flat.begin() + static_cast<long>(off),
                                                        flat.begin() + static_cast<long>(off + f.dim)));
    off += static_cast<std::size_t>(f.dim);
  }
  return obs;
}

inline void validate_observation(const FieldObservation& obs, const FieldSchema& schema) {
  require_shape(obs.values.size() == schema.size(), "observation field count differs from schema");
  for (std::size_t i = 0; i < schema.size(); ++i) {
    require_shape(obs.values[i].first == schema[i].name, "observation field order differs from schema");
    require_shape(static_cast<int>(obs.values[i].second.size()) == schema[i].dim,
                  "field '" + schema[i].name + "' has wrong dimension");
  }
}

struct StepResult {
  FieldObservation observation;
  double reward = 0;
  bool continuation = true;
};

namespace env_detail {

inline double wrap_angle(double th) {
  th = std::fmod(th + std::numbers::pi, 2 * std::numbers::pi);
  if (th < 0) th += 2 * std::numbers::pi;
  return th - std::numbers::pi;
}

}  // namespace env_detail

struct PendulumParams {
  static constexpr double gravity = 9.8;
  static constexpr double length = 1.0;
  static constexpr double mass = 1.0;
  static constexpr double damping = 0.1;
  static constexpr double dt = 0.05;
};

struct ChainParams {
  static constexpr int masses = 3;
  static constexpr double stiffness = 2.0;
  static constexpr double damping = 0.3;
  static constexpr double force_scale = 2.0;
  static constexpr double dt = 0.05;
};

inline const std::map<std::string, std::vector<std::string>>& task_registry() {
  static const std::map<std::string, std::vector<std::string>> reg = {
      {"pendulum", {"balance", "swingup"}},
      {"chain", {"hold", "travel"}},
  };
  return reg;
}

inline EnvSpec make_spec(const std::string& family, const std::string& task, int episode_length = 200) {
  const auto& reg = task_registry();
  auto it = reg.find(family);
  if (it == reg.end()) throw ConfigError("unknown environment family: " + family);
  if (std::find(it->second.begin(), it->second.end(), task) == it->second.end())
    throw ConfigError("unknown task '" + task + "' for family " + family);
  if (episode_length < 1) throw ConfigError("episode_length must be positive");
  EnvSpec s;
  s.family = family;
  s.task = task;
  s.episode_length = episode_length;
  if (family == "pendulum") {
    s.field_schema = {{"angle", 2}, {"velocity", 1}};
    s.action_dim = 1;
  } else {
    for (int i = 0; i < ChainParams::masses; ++i) {
      s.field_schema.push_back({"pos" + std::to_string(i), 1});
      s.field_schema.push_back({"vel" + std::to_string(i), 1});
    }
    s.action_dim = ChainParams::masses;
  }
  return s;
}

// "pendulum/balance" -> make_spec("pendulum", "balance").
inline EnvSpec parse_spec(const std::string& name, int episode_length = 200) {
  auto slash = name.find('/');
  if (slash == std::string::npos) throw ConfigError("environment name must be family/task: " + name);
  return make_spec(name.substr(0, slash), name.substr(slash + 1), episode_length);
}

// Joint grouping used by the joint_wise partition: one group per physical
// joint / body.
inline std::vector<std::vector<std::string>> default_joint_map(const EnvSpec& spec) {
  if (spec.family == "pendulum") return {{"angle", "velocity"}};
  std::vector<std::vector<std::string>> groups;
  for (int i = 0; i < ChainParams::masses; ++i)
    groups.push_back({"pos" + std::to_string(i), "vel" + std::to_string(i)});
  return groups;
}

class Environment {
 public:
  Environment(EnvSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {
    make_spec(spec_.family, spec_.task, spec_.episode_length);  // validates
    reset();
  }

  FieldObservation reset() {
    t_ = 0;
    done_ = false;
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    if (spec_.family == "pendulum") {
      state_ = {std::numbers::pi + u(rng_), u(rng_)};
    } else {
      state_.assign(2 * ChainParams::masses, 0.0);
      for (int i = 0; i < ChainParams::masses; ++i) state_[2 * i] = u(rng_);
    }
    return observe();
  }

  StepResult step(const std::vector<double>& action) {
    require_shape(static_cast<int>(action.size()) == spec_.action_dim, "action dimension mismatch");
    if (done_) throw StateError("step() called on a terminated episode");
    std::vector<double> a(action);
    for (auto& x : a) x = std::clamp(x, -1.0, 1.0);
    if (spec_.family == "pendulum")
      step_pendulum(a);
    else
      step_chain(a);
    ++t_;
    StepResult res;
    res.observation = observe();
    res.reward = reward();
    res.continuation = t_ < spec_.episode_length;
    done_ = !res.continuation;
    return res;
  }

  [[nodiscard]] double reward() const {
    if (spec_.family == "pendulum") {
      const double th = state_[0];
      if (spec_.task == "balance")
        return std::clamp(1.0 - std::abs(env_detail::wrap_angle(th)) / std::numbers::pi, 0.0, 1.0);
      return (1.0 + std::cos(th)) / 2.0;
    }
    double sum_abs = 0, sum = 0;
    for (int i = 0; i < ChainParams::masses; ++i) {
      sum_abs += std::abs(state_[2 * i]);
      sum += state_[2 * i];
    }
    const double n = ChainParams::masses;
    if (spec_.task == "hold") return std::clamp(1.0 - sum_abs / n, 0.0, 1.0);
    return std::clamp(1.0 - std::abs(sum / n - 1.0), 0.0, 1.0);
  }

  [[nodiscard]] FieldObservation observe() const {
    std::vector<double> flat;
    if (spec_.family == "pendulum")
      flat = {std::cos(state_[0]), std::sin(state_[0]), state_[1]};
    else
      flat = state_;
    return make_observation(spec_.field_schema, flat, t_);
  }

  // Direct state access for tests and diagnostics.
  [[nodiscard]] const std::vector<double>& state() const { return state_; }
  void set_state(std::vector<double> s) {
    require_shape(s.size() == state_.size(), "state size mismatch");
    state_ = std::move(s);
  }

  [[nodiscard]] const EnvSpec& spec() const { return spec_; }
  [[nodiscard]] long t() const { return t_; }
  [[nodiscard]] bool done() const { return done_; }

 private:
  void step_pendulum(const std::vector<double>& a) {
    using P = PendulumParams;
    double& th = state_[0];
    double& w = state_[1];
    const double acc = (P::gravity / P::length) * std::sin(th) - P::damping * w + a[0] / (P::mass * P::length * P::length);
    w += P::dt * acc;
    th += P::dt * w;
  }

  void step_chain(const std::vector<double>& a) {
    using C = ChainParams;
    std::vector<double> acc(C::masses);
    for (int i = 0; i < C::masses; ++i) {
      const double x = state_[2 * i];
      const double left = i == 0 ? 0.0 : state_[2 * (i - 1)];
      double f = -C::stiffness * (x - left);
      if (i + 1 < C::masses) f += C::stiffness * (state_[2 * (i + 1)] - x);
      f += -C::damping * state_[2 * i + 1] + C::force_scale * a[i];
      acc[i] = f;
    }
    for (int i = 0; i < C::masses; ++i) {
      state_[2 * i + 1] += C::dt * acc[i];
      state_[2 * i] += C::dt * state_[2 * i + 1];
    }
  }

  EnvSpec spec_;
  std::mt19937_64 rng_;
  std::vector<double> state_;
  long t_ = 0;
  bool done_ = false;
};

inline Environment make_env(const EnvSpec& spec, std::uint64_t seed) { return Environment(spec, seed); }

}  // namespace fieldnode
