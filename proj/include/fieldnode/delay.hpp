#pragma once

// Random observation delay: at step t the agent receives o_{t - delta_t}
// with delta_t ~ U{1..tau_max}, drawn independently per step. Rewards and
// continuation flags are delivered undelayed. Before enough history exists
// (t - delta < 0) the first observation of the episode is returned.

#include <cstdint>
#include <deque>
#include <random>

#include "fieldnode/env.hpp"

namespace fieldnode {

inline int sample_delay(std::mt19937_64& rng, int tau_max) {
  if (tau_max < 1) throw ConfigError("tau_max must be >= 1 to sample a delay");
  std::uniform_int_distribution<int> dist(1, tau_max);
  return dist(rng);
}

// History of the most recent tau_max + 1 true observations, oldest first.
class DelayQueue {
 public:
  explicit DelayQueue(int tau_max) : tau_max_(tau_max) {
    if (tau_max < 0) throw ConfigError("tau_max must be non-negative");
  }

  void clear() { buffer_.clear(); }

  void push(FieldObservation obs) {
    if (!buffer_.empty() && obs.timestamp <= buffer_.back().timestamp)
      throw StateError("observations must be pushed in increasing timestamp order");
    buffer_.push_back(std::move(obs));
    while (buffer_.size() > static_cast<std::size_t>(tau_max_) + 1) buffer_.pop_front();
  }

  [[nodiscard]] std::size_t size() const { return buffer_.size(); }
  [[nodiscard]] bool empty() const { return buffer_.empty(); }
  [[nodiscard]] int tau_max() const { return tau_max_; }
  [[nodiscard]] const std::deque<FieldObservation>& buffer() const { return buffer_; }

 private:
  std::deque<FieldObservation> buffer_;
  int tau_max_;
};

// Returns o_{max(t - delta, 0)} from the queue.
inline const FieldObservation& delayed_observe(const DelayQueue& queue, long t, int delta) {
  if (queue.empty()) throw StateError("delayed_observe on an empty queue");
  const auto& buf = queue.buffer();
  if (buf.back().timestamp < t) throw StateError("queue does not yet hold step " + std::to_string(t));
  const long target = std::max(t - delta, 0L);
  for (auto it = buf.rbegin(); it != buf.rend(); ++it)
    if (it->timestamp <= target) return *it;
  throw StateError("requested observation " + std::to_string(target) + " is no longer buffered");
}

struct DelayedStep {
  FieldObservation observation;       // what the agent sees
  FieldObservation true_observation;  // o_t, for diagnostics
  double reward = 0;
  bool continuation = true;
  int delta = 0;
};

// Wraps an Environment with the random-delay queue. tau_max == 0 bypasses
// the delay entirely.
class DelayedEnv {
 public:
  DelayedEnv(Environment env, int tau_max, std::uint64_t delay_seed)
      : env_(std::move(env)), queue_(tau_max), rng_(delay_seed) {}

  DelayedStep reset() {
    queue_.clear();
    FieldObservation o0 = env_.reset();
    queue_.push(o0);
    DelayedStep s;
    s.delta = queue_.tau_max() == 0 ? 0 : sample_delay(rng_, queue_.tau_max());
    s.observation = o0;
    s.true_observation = std::move(o0);
    return s;
  }

  DelayedStep step(const std::vector<double>& action) {
    StepResult r = env_.step(action);
    DelayedStep s;
    s.reward = r.reward;
    s.continuation = r.continuation;
    s.true_observation = r.observation;
    queue_.push(std::move(r.observation));
    if (queue_.tau_max() == 0) {
      s.observation = s.true_observation;
      return s;
    }
    s.delta = sample_delay(rng_, queue_.tau_max());
    s.observation = delayed_observe(queue_, env_.t(), s.delta);
    return s;
  }

  [[nodiscard]] const Environment& env() const { return env_; }
  [[nodiscard]] Environment& env() { return env_; }
  [[nodiscard]] const EnvSpec& spec() const { return env_.spec(); }
  [[nodiscard]] int tau_max() const { return queue_.tau_max(); }

 private:
  Environment env_;
  DelayQueue queue_;
  std::mt19937_64 rng_;
};

}  // namespace fieldnode
