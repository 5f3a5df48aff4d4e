#pragma once

// Experiment orchestration. Per seed: prefill with random actions, then
// alternate one collected episode with world-model and behavior updates at
// the configured train ratio; evaluate greedily on a separate environment
// instance; write metrics, checkpoints and a run record.
//
// Output layout of run(config, out):
//   out/config.json              resolved config + hash
//   out/summary.csv              one row per seed
//   out/learning_curve.{csv,svg} training return across seeds
//   out/seed_<s>/metrics.jsonl   deterministic per-episode metrics
//   out/seed_<s>/record.json     run record (includes wall time)
//   out/seed_<s>/checkpoint.fnck final parameters
//   out/seed_<s>/FAILED          present only when the run aborted

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fieldnode/agent.hpp"
#include "fieldnode/behavior.hpp"
#include "fieldnode/checkpoint.hpp"
#include "fieldnode/config.hpp"
#include "fieldnode/delay.hpp"
#include "fieldnode/plots.hpp"
#include "fieldnode/replay.hpp"
#include "fieldnode/trainer.hpp"

namespace fieldnode {

namespace fs = std::filesystem;

// Training precision of the harness.
using Real = float;

// Independent stream seeds from one run seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class SeedStream : std::uint64_t { model = 1, actor_critic, train, act, env, delay, eval_env, eval_delay, eval_act };

inline std::uint64_t stream_seed(std::uint64_t seed, SeedStream s) {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

// One episode; `agent == nullptr` acts uniformly at random, redrawing the
// action every `hold` steps.
template <class T>
Episode collect_episode(DelayedEnv& env, FilteringAgent<T>* agent, bool greedy, std::mt19937_64& rng, int hold = 1) {
  const int A = env.spec().action_dim;
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  Episode ep;
  std::vector<double> prev(static_cast<std::size_t>(A), 0.0);
  if (agent) agent->reset();
  DelayedStep s = env.reset();
  ep.push_back({s.observation, prev, 0.0, true, s.delta});
  for (long t = 0;; ++t) {
    std::vector<double> a(static_cast<std::size_t>(A));
    if (agent) {
      a = agent->act(s.observation, prev, greedy, rng);
    } else if (t % hold != 0) {
      a = prev;
    } else {
      for (auto& x : a) x = uniform(rng);
    }
    s = env.step(a);
    ep.push_back({s.observation, a, s.reward, s.continuation, s.delta});
    prev = std::move(a);
    if (!s.continuation) break;
  }
  return ep;
}

inline double episode_return(const Episode& ep) {
  double r = 0;
  for (const auto& t : ep) r += t.reward;
  return r;
}

// Mean undiscounted return of the uniform random policy.
inline double random_policy_return(const EnvSpec& spec, int tau_max, int episodes, std::uint64_t seed) {
  DelayedEnv env(make_env(spec, derive_seed(seed, 100)), tau_max, derive_seed(seed, 101));
  std::mt19937_64 rng(derive_seed(seed, 102));
  double sum = 0;
  for (int i = 0; i < episodes; ++i) sum += episode_return(collect_episode<Real>(env, nullptr, false, rng));
  return episodes > 0 ? sum / episodes : 0.0;
}

struct EpisodeRecord {
  int episode = 0;
  double ret = 0;
  double wall_time = 0;  // seconds since run start
  bool random = false;
};

struct EvalRecord {
  int episode = 0;  // collected episodes at evaluation time
  std::vector<double> returns;
  double mean = 0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string label;
  int node_count = 0;
  nlohmann::json plan;
  std::vector<EpisodeRecord> episodes;
  std::vector<EvalRecord> evals;
  EvalRecord final_eval;
  long updates = 0;
  bool failed = false;
  std::string error;
  double wall_time = 0;

  [[nodiscard]] std::vector<double> returns() const {
    std::vector<double> r;
    for (const auto& e : episodes) r.push_back(e.ret);
    return r;
  }
  [[nodiscard]] std::vector<int> episode_indices() const {
    std::vector<int> r;
    for (const auto& e : episodes) r.push_back(e.episode);
    return r;
  }
};

inline nlohmann::json to_json(const EvalRecord& e) {
  return {{"episode", e.episode}, {"returns", e.returns}, {"mean", e.mean}};
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["label"] = r.label;
  j["node_count"] = r.node_count;
  j["plan"] = r.plan;
  j["status"] = r.failed ? "failed" : "ok";
  if (r.failed) j["error"] = r.error;
  j["updates"] = r.updates;
  j["wall_time"] = r.wall_time;
  j["episodes"] = nlohmann::json::array();
  for (const auto& e : r.episodes)
    j["episodes"].push_back({{"episode", e.episode}, {"return", e.ret}, {"wall_time", e.wall_time}, {"random", e.random}});
  j["evals"] = nlohmann::json::array();
  for (const auto& e : r.evals) j["evals"].push_back(to_json(e));
  j["final_eval"] = to_json(r.final_eval);
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.label = j.value("label", "");
  r.node_count = j.value("node_count", 0);
  r.plan = j.value("plan", nlohmann::json());
  r.failed = j.value("status", "ok") != "ok";
  r.error = j.value("error", "");
  r.updates = j.value("updates", 0L);
  r.wall_time = j.value("wall_time", 0.0);
  for (const auto& e : j.at("episodes"))
    r.episodes.push_back({e.at("episode").get<int>(), e.at("return").get<double>(), e.value("wall_time", 0.0),
                          e.value("random", false)});
  auto eval = [](const nlohmann::json& e) {
    return EvalRecord{e.at("episode").get<int>(), e.at("returns").get<std::vector<double>>(), e.at("mean").get<double>()};
  };
  for (const auto& e : j.at("evals")) r.evals.push_back(eval(e));
  r.final_eval = eval(j.at("final_eval"));
  return r;
}

inline RunRecord load_run_record(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot read " + path.string());
  return run_record_from_json(nlohmann::json::parse(in));
}

// JSONL sink; every line carries the config hash and seed. A default
// constructed writer discards everything.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const fs::path& path, std::string hash, std::uint64_t seed)
      : out_(std::make_unique<std::ofstream>(path, std::ios::trunc)), hash_(std::move(hash)), seed_(seed) {
    if (!*out_) throw StateError("cannot write " + path.string());
  }

  void write(const std::string& phase, nlohmann::json j) {
    if (!out_) return;
    j["phase"] = phase;
    j["config_hash"] = hash_;
    j["seed"] = seed_;
    *out_ << j.dump() << '\n';
    out_->flush();
  }

 private:
  std::unique_ptr<std::ofstream> out_;
  std::string hash_;
  std::uint64_t seed_ = 0;
};

inline std::string expand_seed(std::string pattern, std::uint64_t seed) {
  const std::string key = "{seed}";
  for (auto pos = pattern.find(key); pos != std::string::npos; pos = pattern.find(key, pos))
    pattern.replace(pos, key.size(), std::to_string(seed));
  return pattern;
}

// Loads encoder, SSM and head parameters from a source checkpoint; the
// actor-critic stays freshly initialized because rewards differ by task.
template <class T>
void transfer_init(WorldModel<T>& model, const fs::path& source) {
  const Checkpoint ck = load_checkpoint(source);
  load_world_model(ck, model);
}

// Observation hooks for tests and diagnostics.
struct RunHooks {
  std::function<void(const WorldModel<Real>&, const ActorCritic<Real>&)> on_start;
  std::function<void(const LossReport&, const BehaviorMetrics&, long update)> on_update;
};

namespace harness_detail {

struct Averager {
  LossReport wm;
  BehaviorMetrics bh;
  int n = 0;

  void add(const LossReport& r, const BehaviorMetrics& b) {
    if (wm.gate_mean.size() < r.gate_mean.size()) wm.gate_mean.resize(r.gate_mean.size(), 0.0);
    wm.recon += r.recon;
    wm.reward += r.reward;
    wm.continuation += r.continuation;
    wm.kl += r.kl;
    wm.delay_entropy += r.delay_entropy;
    wm.total += r.total;
    for (std::size_t k = 0; k < r.gate_mean.size(); ++k) wm.gate_mean[k] += r.gate_mean[k];
    bh.policy_loss += b.policy_loss;
    bh.value_loss += b.value_loss;
    bh.mean_return += b.mean_return;
    bh.mean_entropy += b.mean_entropy;
    ++n;
  }

  void finish() {
    if (n == 0) return;
    const double s = 1.0 / n;
    wm.recon *= s, wm.reward *= s, wm.continuation *= s, wm.kl *= s, wm.delay_entropy *= s, wm.total *= s;
    for (auto& g : wm.gate_mean) g *= s;
    bh.policy_loss *= s, bh.value_loss *= s, bh.mean_return *= s, bh.mean_entropy *= s;
  }
};

inline EvalRecord evaluate(DelayedEnv& env, FilteringAgent<Real>& agent, int episodes, int at, std::mt19937_64& rng) {
  EvalRecord e;
  e.episode = at;
  for (int i = 0; i < episodes; ++i) e.returns.push_back(episode_return(collect_episode(env, &agent, true, rng)));
  e.mean = e.returns.empty() ? 0.0 : std::accumulate(e.returns.begin(), e.returns.end(), 0.0) / e.returns.size();
  return e;
}

}  // namespace harness_detail

// One seed. Exceptions abort the run but the partial record, metrics and a
// FAILED marker are kept; `dir` empty disables all file output.
inline RunRecord run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
                          const RunHooks& hooks = {}) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  cfg.validate();
  RunRecord rec;
  rec.seed = seed;
  rec.config_hash = config_hash(cfg);
  const EnvSpec spec = cfg.env_spec();
  const PartitionPlan plan = cfg.plan();
  rec.node_count = plan.node_count();
  rec.plan = to_json(plan);

  if (!dir.empty()) {
    fs::create_directories(dir);
    fs::remove(dir / "FAILED");
  }
  MetricsWriter log = dir.empty() ? MetricsWriter() : MetricsWriter(dir / "metrics.jsonl", rec.config_hash, seed);
  log.write("run_start", {{"env", spec.name()},
                          {"tau_max", cfg.tau_max},
                          {"node_count", rec.node_count},
                          {"plan", rec.plan},
                          {"posterior_mode", to_string(cfg.model.posterior_mode)},
                          {"transfer_initialized", cfg.transfer_source.has_value()}});

  try {
    WorldModel<Real> model(spec, plan, cfg.model, stream_seed(seed, SeedStream::model));
    ActorCritic<Real> ac(model.feature_dim(), model.action_dim(), cfg.behavior, stream_seed(seed, SeedStream::actor_critic));
    if (cfg.transfer_source) transfer_init(model, expand_seed(*cfg.transfer_source, seed));
    if (hooks.on_start) hooks.on_start(model, ac);

    optim::Optimizer<Real> opt(model.params().group(), cfg.trainer.optimizer_config());
    ReplayDataset replay(cfg.trainer.replay_capacity);
    std::mt19937_64 train_rng(stream_seed(seed, SeedStream::train));
    std::mt19937_64 act_rng(stream_seed(seed, SeedStream::act));
    std::mt19937_64 eval_rng(stream_seed(seed, SeedStream::eval_act));
    DelayedEnv env(make_env(spec, stream_seed(seed, SeedStream::env)), cfg.tau_max, stream_seed(seed, SeedStream::delay));
    DelayedEnv eval_env(make_env(spec, stream_seed(seed, SeedStream::eval_env)), cfg.tau_max,
                        stream_seed(seed, SeedStream::eval_delay));
    FilteringAgent<Real> agent(model, ac.policy());
    double pending_steps = 0;

    auto save = [&](const fs::path& path, int episode) {
      if (dir.empty()) return;
      save_checkpoint<Real>(path, model, &ac, rec.config_hash, {{"seed", seed}, {"episode", episode}, {"updates", rec.updates}});
    };

    for (int ep = 1; ep <= cfg.total_episodes; ++ep) {
      const bool random = ep <= cfg.prefill_episodes;
      Episode episode = collect_episode(env, random ? nullptr : &agent, false, act_rng, cfg.prefill_hold);
      const double ret = episode_return(episode);
      if (!std::isfinite(ret)) throw NonFiniteError("episode return is not finite");
      const auto steps = episode.size() - 1;
      replay.add_episode(std::move(episode));
      rec.episodes.push_back({ep, ret, elapsed(), random});

      pending_steps += static_cast<double>(steps);
      const int n_updates = static_cast<int>(pending_steps / cfg.trainer.train_ratio);
      pending_steps -= static_cast<double>(n_updates) * cfg.trainer.train_ratio;
      harness_detail::Averager avg;
      for (int u = 0; u < n_updates; ++u) {
        SegmentBatch batch;
        try {
          batch = replay.sample_segments(static_cast<std::size_t>(cfg.trainer.batch),
                                         static_cast<std::size_t>(cfg.trainer.seq_len), train_rng);
        } catch (const NotReady&) {
          break;
        }
        auto steps_t = to_step_tensors<Real>(batch, model.obs_dim(), model.action_dim());
        ImagineStart<Real> starts;
        LossReport report;
        {
          ad::Graph<Real> g;
          auto loss = world_model_loss(g, model, steps_t, cfg.trainer, train_rng);
          check_finite(loss.report);
          opt.zero_grad();
          g.backward(loss.total);
          opt.step();
          report = loss.report;
          starts = starts_from_filter(loss.filter, model.node_count(), cfg.behavior.max_starts);
        }
        BehaviorMetrics bm = behavior_step(model, ac, starts, train_rng);
        ++rec.updates;
        avg.add(report, bm);
        if (hooks.on_update) hooks.on_update(report, bm, rec.updates);
      }
      avg.finish();

      log.write("episode", {{"episode", ep}, {"return", ret}, {"steps", steps}, {"random", random}});
      if (avg.n > 0) {
        auto wm = to_json(avg.wm);
        wm["episode"] = ep;
        wm["updates"] = avg.n;
        wm["total_updates"] = rec.updates;
        log.write("world_model", wm);
        auto bh = to_json(avg.bh);
        bh["episode"] = ep;
        bh["updates"] = avg.n;
        log.write("behavior", bh);
      }
      if (cfg.eval_every > 0 && cfg.eval_episodes > 0 && ep % cfg.eval_every == 0) {
        rec.evals.push_back(harness_detail::evaluate(eval_env, agent, cfg.eval_episodes, ep, eval_rng));
        log.write("eval", {{"episode", ep}, {"mean_return", rec.evals.back().mean}, {"returns", rec.evals.back().returns}});
      }
      if (cfg.checkpoint_every > 0 && ep % cfg.checkpoint_every == 0)
        save(dir / ("checkpoint_ep" + std::to_string(ep) + ".fnck"), ep);
    }

    rec.final_eval = harness_detail::evaluate(eval_env, agent, cfg.final_eval_episodes, cfg.total_episodes, eval_rng);
    log.write("final_eval", {{"episode", cfg.total_episodes},
                             {"mean_return", rec.final_eval.mean},
                             {"returns", rec.final_eval.returns}});
    save(dir / "checkpoint.fnck", cfg.total_episodes);
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
    if (!dir.empty()) std::ofstream(dir / "FAILED") << e.what() << '\n';
  }
  log.write("run_end", {{"status", rec.failed ? "failed" : "ok"}, {"updates", rec.updates}, {"error", rec.error}});
  rec.wall_time = elapsed();
  if (!dir.empty()) std::ofstream(dir / "record.json") << std::setw(1) << to_json(rec) << '\n';
  return rec;
}

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) {
  return out.empty() ? fs::path() : out / ("seed_" + std::to_string(seed));
}

// Normalized area under the training-return curve (mean return per episode).
inline double curve_auc(const RunRecord& r) {
  if (r.episodes.empty()) return 0.0;
  double s = 0;
  for (const auto& e : r.episodes) s += e.ret;
  return s / static_cast<double>(r.episodes.size());
}

inline std::vector<CurvePoint> learning_curve(const std::vector<RunRecord>& records) {
  std::vector<std::vector<double>> curves;
  std::vector<int> episodes;
  for (const auto& r : records) {
    if (r.episodes.empty()) continue;
    curves.push_back(r.returns());
    if (episodes.size() < r.episodes.size()) episodes = r.episode_indices();
  }
  return curve_statistics(episodes, curves);
}

inline void write_summary_csv(const fs::path& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot write " + path.string());
  os << "label,seed,status,episodes,updates,node_count,final_eval_mean,auc,config_hash\n" << std::setprecision(17);
  for (const auto& r : records)
    os << r.label << ',' << r.seed << ',' << (r.failed ? "failed" : "ok") << ',' << r.episodes.size() << ','
       << r.updates << ',' << r.node_count << ',' << r.final_eval.mean << ',' << curve_auc(r) << ',' << r.config_hash
       << '\n';
}

inline void write_config(const fs::path& out, const ExperimentConfig& cfg) {
  fs::create_directories(out);
  nlohmann::json j = to_json(cfg);
  j["config_hash"] = config_hash(cfg);
  std::ofstream(out / "config.json") << std::setw(2) << j << '\n';
}

// Seeds run one after another here; each seed is independent, so separate
// processes with disjoint --seed lists parallelize a sweep.
inline std::vector<RunRecord> run(const ExperimentConfig& cfg, const fs::path& out, const std::string& label = "",
                                  const RunHooks& hooks = {}) {
  cfg.validate();
  if (!out.empty()) write_config(out, cfg);
  std::vector<RunRecord> records;
  for (auto seed : cfg.seeds) {
    records.push_back(run_seed(cfg, seed, seed_dir(out, seed), hooks));
    records.back().label = label;
    std::clog << (label.empty() ? "" : label + " ") << "seed " << seed << ": "
              << (records.back().failed ? "FAILED (" + records.back().error + ")" : "ok") << ", final eval "
              << records.back().final_eval.mean << ", " << records.back().updates << " updates, "
              << std::lround(records.back().wall_time) << " s\n";
  }
  if (!out.empty()) {
    write_summary_csv(out / "summary.csv", records);
    emit_curve(out, "learning_curve", cfg.env + " training return", learning_curve(records));
  }
  return records;
}

// ---- posterior ablation --------------------------------------------------

struct PairedRow {
  std::uint64_t seed = 0;
  double a = 0, b = 0;
  [[nodiscard]] double difference() const { return a - b; }
};

struct AblationResult {
  std::vector<RunRecord> message_passing, global_mlp;
  std::vector<PairedRow> paired;  // a = message_passing, b = global_mlp (final eval means)
};

inline std::vector<PairedRow> pair_by_seed(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b,
                                           const std::function<double(const RunRecord&)>& metric) {
  std::vector<PairedRow> rows;
  for (const auto& ra : a)
    for (const auto& rb : b)
      if (ra.seed == rb.seed) rows.push_back({ra.seed, metric(ra), metric(rb)});
  if (rows.size() != a.size() || rows.size() != b.size())
    throw StateError("paired comparison requires identical seed lists");
  return rows;
}

inline void write_paired_csv(const fs::path& path, const std::string& name_a, const std::string& name_b,
                             const std::vector<PairedRow>& rows) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot write " + path.string());
  os << "seed," << name_a << ',' << name_b << ",difference\n" << std::setprecision(17);
  double mean = 0;
  for (const auto& r : rows) {
    os << r.seed << ',' << r.a << ',' << r.b << ',' << r.difference() << '\n';
    mean += r.difference();
  }
  if (!rows.empty()) os << "mean,,," << mean / static_cast<double>(rows.size()) << '\n';
}

inline AblationResult run_ablation_posterior(ExperimentConfig cfg, const fs::path& out) {
  AblationResult res;
  cfg.model.posterior_mode = PosteriorMode::message_passing;
  res.message_passing = run(cfg, out.empty() ? out : out / "message_passing", "message_passing");
  cfg.model.posterior_mode = PosteriorMode::global_mlp;
  res.global_mlp = run(cfg, out.empty() ? out : out / "global_mlp", "global_mlp");
  res.paired = pair_by_seed(res.message_passing, res.global_mlp, [](const RunRecord& r) { return r.final_eval.mean; });
  if (!out.empty()) {
    write_paired_csv(out / "paired_differences.csv", "message_passing", "global_mlp", res.paired);
    std::vector<RunRecord> all = res.message_passing;
    all.insert(all.end(), res.global_mlp.begin(), res.global_mlp.end());
    write_summary_csv(out / "summary.csv", all);
    emit_overlay(out, "posterior_ablation", cfg.env + " posterior ablation",
                 {{"message_passing", learning_curve(res.message_passing)}, {"global_mlp", learning_curve(res.global_mlp)}});
  }
  return res;
}

// ---- partition sweep -----------------------------------------------------

// Hash of everything except the partition plan: identical across a sweep.
inline std::string controlled_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.partition = PartitionStrategy::field_wise;
  c.chunks.reset();
  c.joint_map.reset();
  return config_hash(c);
}

struct SweepResult {
  std::vector<PartitionStrategy> strategies;
  std::vector<std::vector<RunRecord>> records;  // per strategy
};

inline SweepResult run_partition_sweep(ExperimentConfig cfg, const std::vector<PartitionStrategy>& strategies,
                                       const fs::path& out) {
  SweepResult res;
  std::vector<CurveSeries> series;
  std::vector<RunRecord> all;
  const std::string shared = controlled_hash(cfg);
  for (auto s : strategies) {
    ExperimentConfig c = cfg;
    c.partition = s;
    if (s == PartitionStrategy::chunk_wise && !c.chunks) c.chunks = 2;
    if (controlled_hash(c) != shared) throw StateError("partition sweep changed more than the plan");
    res.strategies.push_back(s);
    res.records.push_back(run(c, out.empty() ? out : out / to_string(s), to_string(s)));
    series.push_back({to_string(s), learning_curve(res.records.back())});
    all.insert(all.end(), res.records.back().begin(), res.records.back().end());
  }
  if (!out.empty()) {
    write_summary_csv(out / "summary.csv", all);
    std::ofstream(out / "sweep.json") << std::setw(2)
                                      << nlohmann::json{{"controlled_hash", shared}, {"seeds", cfg.seeds}} << '\n';
    emit_overlay(out, "partition_sweep", cfg.env + " partition strategies", series);
  }
  return res;
}

// ---- transfer ------------------------------------------------------------

// Trailing moving average.
inline std::vector<double> smooth(const std::vector<double>& x, int window) {
  std::vector<double> out(x.size());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += x[i];
    if (i >= static_cast<std::size_t>(window)) s -= x[i - static_cast<std::size_t>(window)];
    out[i] = s / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

// Mean of the last `n` training returns.
inline double final_return(const RunRecord& r, int n = 10) {
  if (r.episodes.empty()) return 0.0;
  const auto k = std::min<std::size_t>(r.episodes.size(), static_cast<std::size_t>(n));
  double s = 0;
  for (std::size_t i = r.episodes.size() - k; i < r.episodes.size(); ++i) s += r.episodes[i].ret;
  return s / static_cast<double>(k);
}

// First episode whose smoothed return reaches `threshold`; INT_MAX if never.
inline int first_reach(const RunRecord& r, double threshold, int window) {
  const auto s = smooth(r.returns(), window);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] >= threshold) return r.episodes[i].episode;
  return std::numeric_limits<int>::max();
}

struct TransferRow {
  std::uint64_t seed = 0;
  double scratch_auc = 0, transfer_auc = 0;
  double scratch_final = 0;
  int scratch_reach = 0, transfer_reach = 0;
};

struct TransferComparison {
  std::vector<TransferRow> rows;
  double mean_scratch_auc = 0, mean_transfer_auc = 0;
  int seeds_no_later = 0;
};

inline TransferComparison compare_transfer(const std::vector<RunRecord>& scratch, const std::vector<RunRecord>& transfer,
                                           int window = 5) {
  TransferComparison c;
  for (const auto& s : scratch)
    for (const auto& t : transfer) {
      if (s.seed != t.seed) continue;
      TransferRow row;
      row.seed = s.seed;
      row.scratch_auc = curve_auc(s);
      row.transfer_auc = curve_auc(t);
      row.scratch_final = final_return(s);
      const double threshold = 0.5 * row.scratch_final;
      row.scratch_reach = first_reach(s, threshold, window);
      row.transfer_reach = first_reach(t, threshold, window);
      c.rows.push_back(row);
    }
  if (c.rows.size() != scratch.size() || c.rows.size() != transfer.size())
    throw StateError("transfer comparison requires matched seeds");
  for (const auto& r : c.rows) {
    c.mean_scratch_auc += r.scratch_auc / static_cast<double>(c.rows.size());
    c.mean_transfer_auc += r.transfer_auc / static_cast<double>(c.rows.size());
    if (r.transfer_reach <= r.scratch_reach) ++c.seeds_no_later;
  }
  return c;
}

inline void write_transfer_csv(const fs::path& path, const TransferComparison& c) {
  std::ofstream os(path);
  if (!os) throw StateError("cannot write " + path.string());
  auto reach = [](int e) { return e == std::numeric_limits<int>::max() ? std::string("never") : std::to_string(e); };
  os << "seed,scratch_auc,transfer_auc,scratch_final,scratch_reach_episode,transfer_reach_episode\n"
     << std::setprecision(17);
  for (const auto& r : c.rows)
    os << r.seed << ',' << r.scratch_auc << ',' << r.transfer_auc << ',' << r.scratch_final << ','
       << reach(r.scratch_reach) << ',' << reach(r.transfer_reach) << '\n';
}

struct TransferResult {
  std::vector<RunRecord> scratch, transfer;
  TransferComparison comparison;
};

// Scratch and transfer-initialized runs of the target config with matched
// seeds; `source` may contain "{seed}".
inline TransferResult run_transfer(ExperimentConfig target, const std::string& source, const fs::path& out) {
  TransferResult res;
  target.transfer_source.reset();
  res.scratch = run(target, out.empty() ? out : out / "scratch", "scratch");
  target.transfer_source = source;
  res.transfer = run(target, out.empty() ? out : out / "transfer", "transfer");
  res.comparison = compare_transfer(res.scratch, res.transfer);
  if (!out.empty()) {
    write_transfer_csv(out / "transfer_summary.csv", res.comparison);
    emit_overlay(out, "transfer_overlay", target.env + " transfer vs scratch",
                 {{"scratch", learning_curve(res.scratch)}, {"transfer", learning_curve(res.transfer)}});
  }
  return res;
}

}  // namespace fieldnode
