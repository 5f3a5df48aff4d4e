#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fieldnode/harness.hpp"
#include "support.hpp"

using namespace fieldnode;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small enough that a three-episode run takes well under a second.
ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.env = "pendulum/balance";
  c.episode_length = 24;
  c.tau_max = 2;
  c.model = fieldnode::testing::tiny_model_config();
  c.trainer.batch = 2;
  c.trainer.seq_len = 6;
  c.trainer.train_ratio = 8;
  c.behavior.hidden = 8;
  c.behavior.layers = 1;
  c.behavior.horizon = 3;
  c.behavior.max_starts = 6;
  c.total_episodes = 3;
  c.eval_every = 2;
  c.eval_episodes = 1;
  c.final_eval_episodes = 2;
  c.seeds = {0};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST(Harness, DeriveSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t k = 0; k < 10; ++k) seen.insert(derive_seed(s, k));
  EXPECT_EQ(seen.size(), 40u);
  EXPECT_EQ(derive_seed(3, 4), derive_seed(3, 4));
}

TEST(Harness, NoDelayCollectionMatchesTheUnwrappedEnvironment) {
  const auto spec = make_spec("pendulum", "balance", 40);
  DelayedEnv wrapped(make_env(spec, 5), 0, 6);
  Environment plain = make_env(spec, 5);
  std::mt19937_64 rng(7), rng_copy(7);
  const Episode ep = collect_episode<Real>(wrapped, nullptr, false, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ASSERT_EQ(ep.size(), 41u);
  EXPECT_EQ(ep[0].observation, plain.reset());
  for (std::size_t t = 1; t < ep.size(); ++t) {
    std::vector<double> a{u(rng_copy)};
    EXPECT_EQ(ep[t].action, a);
    const auto r = plain.step(a);
    EXPECT_EQ(ep[t].observation, r.observation) << "step " << t;
    EXPECT_EQ(ep[t].delta, 0);
  }
}

TEST(Harness, RunProducesOneRecordPerSeedWithAllArtifacts) {
  TempDir dir("fieldnode_harness_run");
  auto cfg = tiny_experiment();
  cfg.seeds = {4, 9};
  const auto records = run(cfg, dir.path);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].seed, 4u);
  EXPECT_EQ(records[1].seed, 9u);
  for (const auto& r : records) {
    EXPECT_FALSE(r.failed) << r.error;
    EXPECT_EQ(r.config_hash, config_hash(cfg));
    ASSERT_EQ(r.episodes.size(), 3u);
    for (std::size_t i = 0; i < r.episodes.size(); ++i) {
      EXPECT_EQ(r.episodes[i].episode, static_cast<int>(i) + 1);
      EXPECT_TRUE(std::isfinite(r.episodes[i].ret));
    }
    EXPECT_TRUE(r.episodes[0].random);
    EXPECT_EQ(r.evals.size(), 1u);
    EXPECT_EQ(r.final_eval.returns.size(), 2u);
    EXPECT_EQ(r.updates, 9);  // 3 episodes x 24 steps / train ratio 8
    const auto sd = dir.path / ("seed_" + std::to_string(r.seed));
    EXPECT_TRUE(fs::exists(sd / "checkpoint.fnck"));
    EXPECT_FALSE(fs::exists(sd / "FAILED"));
    const auto back = load_run_record(sd / "record.json");
    EXPECT_EQ(back.returns(), r.returns());
    for (const auto& line : jsonl(sd / "metrics.jsonl")) {
      EXPECT_EQ(line.at("config_hash"), r.config_hash);
      EXPECT_EQ(line.at("seed"), r.seed);
      EXPECT_FALSE(line.contains("wall_time"));
    }
  }
  EXPECT_TRUE(fs::exists(dir.path / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "learning_curve.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "learning_curve.svg"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir.path / "config.json")).at("config_hash"), config_hash(cfg));
}

TEST(Harness, RerunWithSameSeedIsIdentical) {
  TempDir a("fieldnode_harness_rerun_a"), b("fieldnode_harness_rerun_b");
  const auto cfg = tiny_experiment();
  const auto ra = run(cfg, a.path), rb = run(cfg, b.path);
  EXPECT_EQ(ra[0].returns(), rb[0].returns());
  EXPECT_EQ(ra[0].final_eval.returns, rb[0].final_eval.returns);
  EXPECT_EQ(slurp(a.path / "seed_0/metrics.jsonl"), slurp(b.path / "seed_0/metrics.jsonl"));
  EXPECT_EQ(slurp(a.path / "summary.csv"), slurp(b.path / "summary.csv"));
  EXPECT_EQ(slurp(a.path / "learning_curve.csv"), slurp(b.path / "learning_curve.csv"));
}

TEST(Harness, DifferentSeedsDiffer) {
  auto cfg = tiny_experiment();
  cfg.seeds = {0, 1};
  const auto r = run(cfg, {});
  EXPECT_NE(r[0].returns(), r[1].returns());
}

TEST(Harness, AbortedRunKeepsPartialResultsAndAFailureMarker) {
  TempDir dir("fieldnode_harness_fail");
  auto cfg = tiny_experiment();
  cfg.transfer_source = (dir.path / "no_such_checkpoint.fnck").string();
  const auto records = run(cfg, dir.path);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_TRUE(records[0].failed);
  EXPECT_NE(records[0].error.find("cannot open checkpoint"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path / "seed_0/FAILED"));
  EXPECT_TRUE(load_run_record(dir.path / "seed_0/record.json").failed);
  const auto lines = jsonl(dir.path / "seed_0/metrics.jsonl");
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines.back().at("phase"), "run_end");
  EXPECT_EQ(lines.back().at("status"), "failed");
}

TEST(Harness, NonFiniteTrainingAbortsWithMarker) {
  TempDir dir("fieldnode_harness_nan");
  auto cfg = tiny_experiment();
  RunHooks hooks;
  hooks.on_start = [](const WorldModel<Real>& m, const ActorCritic<Real>&) {
    auto& model = const_cast<WorldModel<Real>&>(m);
    model.heads().reward_net().output().bias().value.setConstant(std::numeric_limits<Real>::quiet_NaN());
  };
  const auto r = run(cfg, dir.path, "", hooks);
  EXPECT_TRUE(r[0].failed);
  EXPECT_NE(r[0].error.find("reward"), std::string::npos) << r[0].error;
  EXPECT_FALSE(r[0].episodes.empty());
  EXPECT_TRUE(fs::exists(dir.path / "seed_0/FAILED"));
}

TEST(Harness, PosteriorAblationPairsSeedsWithMatchingSchema) {
  TempDir dir("fieldnode_harness_ablation");
  auto cfg = tiny_experiment();
  cfg.total_episodes = 2;
  cfg.seeds = {1, 2};
  const auto res = run_ablation_posterior(cfg, dir.path);
  ASSERT_EQ(res.paired.size(), 2u);
  EXPECT_EQ(res.paired[0].seed, 1u);
  EXPECT_EQ(res.paired[1].seed, 2u);
  for (const auto& r : res.paired) EXPECT_DOUBLE_EQ(r.difference(), r.a - r.b);
  auto keys = [](const fs::path& p) {
    std::vector<std::pair<std::string, std::set<std::string>>> out;
    for (const auto& line : jsonl(p)) {
      std::set<std::string> k;
      for (const auto& [key, _] : line.items()) k.insert(key);
      out.emplace_back(line.at("phase"), k);
    }
    return out;
  };
  EXPECT_EQ(keys(dir.path / "message_passing/seed_1/metrics.jsonl"), keys(dir.path / "global_mlp/seed_1/metrics.jsonl"));
  const auto csv = slurp(dir.path / "paired_differences.csv");
  EXPECT_EQ(csv.rfind("seed,message_passing,global_mlp,difference\n", 0), 0u);
  EXPECT_NE(res.message_passing[0].config_hash, res.global_mlp[0].config_hash);
}

TEST(Harness, PartitionSweepRecordsNodeCountsAndSharesEverythingElse) {
  TempDir dir("fieldnode_harness_sweep");
  auto cfg = tiny_experiment();
  cfg.total_episodes = 1;
  const std::vector<PartitionStrategy> all{PartitionStrategy::field_wise, PartitionStrategy::joint_wise,
                                           PartitionStrategy::chunk_wise, PartitionStrategy::element_wise};
  const auto res = run_partition_sweep(cfg, all, dir.path);
  ASSERT_EQ(res.records.size(), 4u);
  const std::vector<int> expected_n{2, 1, 2, 3};  // one joint carries both fields
  for (std::size_t i = 0; i < 4; ++i) {
    ASSERT_EQ(res.records[i].size(), 1u);
    EXPECT_FALSE(res.records[i][0].failed) << res.records[i][0].error;
    EXPECT_EQ(res.records[i][0].node_count, expected_n[i]) << to_string(all[i]);
    EXPECT_EQ(res.records[i][0].plan.at("strategy"), to_string(all[i]));
  }
  const auto start = jsonl(dir.path / "element_wise/seed_0/metrics.jsonl").front();
  EXPECT_EQ(start.at("phase"), "run_start");
  EXPECT_EQ(start.at("node_count"), 3);

  ExperimentConfig field = cfg, chunk = cfg;
  chunk.partition = PartitionStrategy::chunk_wise;
  chunk.chunks = 2;
  EXPECT_NE(config_hash(field), config_hash(chunk));
  EXPECT_EQ(controlled_hash(field), controlled_hash(chunk));
}

TEST(Harness, TransferLoadsTheSourceWorldModelBitForBit) {
  TempDir dir("fieldnode_harness_transfer");
  auto src = tiny_experiment();
  ASSERT_FALSE(run(src, dir.path / "source")[0].failed);
  const auto ck = load_checkpoint(dir.path / "source/seed_0/checkpoint.fnck");

  auto target = tiny_experiment();
  target.env = "pendulum/swingup";
  target.transfer_source = (dir.path / "source/seed_{seed}/checkpoint.fnck").string();
  bool checked = false;
  RunHooks hooks;
  hooks.on_start = [&](const WorldModel<Real>& m, const ActorCritic<Real>& ac) {
    for (const auto* p : m.params().group()) {
      const ad::Matrix<Real> expect = ck.params.at(p->name).cast<Real>();
      EXPECT_EQ(std::memcmp(expect.data(), p->value.data(), sizeof(Real) * p->value.size()), 0) << p->name;
    }
    // Policy and value stay freshly initialized.
    const auto* pol = ac.params().group("policy/").front();
    const ad::Matrix<Real> src_pol = ck.params.at(pol->name).cast<Real>();
    EXPECT_NE(std::memcmp(src_pol.data(), pol->value.data(), sizeof(Real) * pol->value.size()), 0);
    checked = true;
  };
  const auto r = run(target, dir.path / "target", "", hooks);
  EXPECT_TRUE(checked);
  EXPECT_FALSE(r[0].failed) << r[0].error;
}

TEST(Harness, CrossFamilyTransferIsRefusedWithANamedMismatch) {
  TempDir dir("fieldnode_harness_cross");
  auto src = tiny_experiment();
  src.total_episodes = 1;
  ASSERT_FALSE(run(src, dir.path / "source")[0].failed);
  auto target = tiny_experiment();
  target.env = "chain/hold";
  target.transfer_source = (dir.path / "source/seed_0/checkpoint.fnck").string();
  const auto r = run(target, {});
  EXPECT_TRUE(r[0].failed);
  EXPECT_NE(r[0].error.find("dynamics family"), std::string::npos) << r[0].error;
}

TEST(Harness, TransferComparisonUsesScratchFinalAsReference) {
  RunRecord scratch, transfer;
  scratch.seed = transfer.seed = 3;
  for (int e = 1; e <= 20; ++e) {
    scratch.episodes.push_back({e, e < 10 ? 0.0 : 10.0, 0, false});
    transfer.episodes.push_back({e, e < 4 ? 0.0 : 10.0, 0, false});
  }
  const auto c = compare_transfer({scratch}, {transfer}, 1);
  ASSERT_EQ(c.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(c.rows[0].scratch_final, 10.0);
  EXPECT_EQ(c.rows[0].scratch_reach, 10);
  EXPECT_EQ(c.rows[0].transfer_reach, 4);
  EXPECT_EQ(c.seeds_no_later, 1);
  EXPECT_GT(c.mean_transfer_auc, c.mean_scratch_auc);

  RunRecord other = transfer;
  other.seed = 4;
  EXPECT_THROW(compare_transfer({scratch}, {other}), StateError);
}

TEST(Harness, SmoothingIsATrailingMean) {
  EXPECT_EQ(smooth({1, 2, 3, 4}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5}));
  EXPECT_EQ(smooth({5}, 3), (std::vector<double>{5}));
}

TEST(Harness, GreedyAgentIsDeterministic) {
  const auto spec = make_spec("pendulum", "balance", 20);
  WorldModel<Real> model(spec, build_partition(spec.field_schema, PartitionStrategy::field_wise),
                         fieldnode::testing::tiny_model_config(), 1);
  BehaviorConfig bc;
  bc.hidden = 8;
  ActorCritic<Real> ac(model.feature_dim(), model.action_dim(), bc, 2);
  FilteringAgent<Real> agent(model, ac.policy());
  auto play = [&](std::uint64_t rng_seed) {
    DelayedEnv env(make_env(spec, 3), 2, 4);
    std::mt19937_64 rng(rng_seed);
    return collect_episode(env, &agent, true, rng);
  };
  const auto a = play(1), b = play(2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].action, b[t].action);
  for (const auto& tr : a)
    for (double x : tr.action) EXPECT_LE(std::abs(x), 1.0);
  EXPECT_EQ(agent.last_gate().cols(), model.history());
  EXPECT_NEAR(agent.last_gate().sum(), 1.0, 1e-5);
}

TEST(Harness, RandomActionsAreRedrawnEveryHoldSteps) {
  const auto spec = make_spec("chain", "hold", 23);
  DelayedEnv env(make_env(spec, 1), 0, 2);
  std::mt19937_64 rng(3);
  const auto ep = collect_episode<Real>(env, nullptr, false, rng, 4);
  ASSERT_EQ(ep.size(), 24u);
  // ep[t + 1].action is the action taken at step t.
  for (std::size_t t = 1; t < 23; ++t) {
    if (t % 4 == 0)
      EXPECT_NE(ep[t + 1].action, ep[t].action) << t;
    else
      EXPECT_EQ(ep[t + 1].action, ep[t].action) << t;
  }
  std::mt19937_64 a(5), b(5);
  DelayedEnv e1(make_env(spec, 1), 0, 2), e2(make_env(spec, 1), 0, 2);
  EXPECT_EQ(collect_episode<Real>(e1, nullptr, false, a), collect_episode<Real>(e2, nullptr, false, b, 1));
}
