#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <vector>

#include "fieldnode/env.hpp"

namespace fieldnode {

// One agent step. `action` is the action whose execution produced this step
// (a_{t-1}); it is all zeros on the first step of an episode. `reward` and
// `continuation` belong to the same transition, so they are undelayed.
struct Transition {
  FieldObservation observation;
  std::vector<double> action;
  double reward = 0;
  bool continuation = true;
  int delta = 0;

  bool operator==(const Transition&) const = default;
};

using Episode = std::vector<Transition>;

struct SegmentRef {
  std::uint64_t episode_id = 0;
  std::size_t start = 0;
};

struct SegmentBatch {
  std::vector<std::vector<Transition>> sequences;  // B sequences of L steps
  std::vector<SegmentRef> refs;

  [[nodiscard]] std::size_t batch() const { return sequences.size(); }
  [[nodiscard]] std::size_t length() const { return sequences.empty() ? 0 : sequences.front().size(); }
};

// Append-only episode store with FIFO eviction of whole episodes once the
// total step count exceeds capacity. One writer, many readers: sampling
// holds a shared lock and so sees a consistent snapshot.
class ReplayDataset {
 public:
  explicit ReplayDataset(std::size_t capacity = 100000) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
  }

  std::uint64_t add_episode(Episode ep) {
    if (ep.empty()) throw StateError("cannot store an empty episode");
    std::unique_lock lock(mu_);
    steps_ += ep.size();
    episodes_.push_back({next_id_, std::move(ep)});
    while (steps_ > capacity_ && episodes_.size() > 1) {
      steps_ -= episodes_.front().steps.size();
      episodes_.pop_front();
    }
    return next_id_++;
  }

  // B windows of exactly L consecutive steps, uniform over every valid
  // (episode, start) pair. Throws NotReady when no episode holds L steps.
  SegmentBatch sample_segments(std::size_t batch, std::size_t length, std::mt19937_64& rng) const {
    if (batch == 0 || length == 0) throw ConfigError("batch and length must be positive");
    std::shared_lock lock(mu_);
    std::size_t total = 0;
    for (const auto& e : episodes_)
      if (e.steps.size() >= length) total += e.steps.size() - length + 1;
    if (total == 0) throw NotReady("no stored episode holds " + std::to_string(length) + " steps");
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    SegmentBatch out;
    out.sequences.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t k = pick(rng);
      for (const auto& e : episodes_) {
        if (e.steps.size() < length) continue;
        const std::size_t n = e.steps.size() - length + 1;
        if (k < n) {
          out.sequences.emplace_back(e.steps.begin() + static_cast<long>(k),
                                     e.steps.begin() + static_cast<long>(k + length));
          out.refs.push_back({e.id, k});
          break;
        }
        k -= n;
      }
    }
    return out;
  }

  [[nodiscard]] std::size_t steps() const {
    std::shared_lock lock(mu_);
    return steps_;
  }
  [[nodiscard]] std::size_t episode_count() const {
    std::shared_lock lock(mu_);
    return episodes_.size();
  }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }

  [[nodiscard]] Episode episode(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    for (const auto& e : episodes_)
      if (e.id == id) return e.steps;
    throw StateError("episode " + std::to_string(id) + " not stored");
  }

 private:
  struct Stored {
    std::uint64_t id;
    Episode steps;
  };

  std::size_t capacity_;
  std::size_t steps_ = 0;
  std::uint64_t next_id_ = 0;
  std::deque<Stored> episodes_;
  mutable std::shared_mutex mu_;
};

}  // namespace fieldnode
