#include <gtest/gtest.h>

#include <cmath>

#include "fieldnode/trainer.hpp"
#include "support.hpp"

using namespace fieldnode;
using fieldnode::testing::gradient_rel_error;
using fieldnode::testing::random_episode;
using fieldnode::testing::tiny_model_config;
using M = ad::Matrix<double>;
using G = ad::Graph<double>;

namespace {

StepTensors<double> random_steps(const EnvSpec& spec, std::size_t B, std::size_t L, std::uint64_t seed) {
  ReplayDataset d;
  d.add_episode(random_episode(spec, 2, seed));
  std::mt19937_64 rng(seed);
  return to_step_tensors<double>(d.sample_segments(B, L, rng), spec.obs_dim(), spec.action_dim);
}

double kl_scalar(const M& mq, const M& sq, const M& mp, const M& sp, int n) {
  G g;
  return kl_nodes<double>({g.constant(mq), g.constant(sq)}, {g.constant(mp), g.constant(sp)}, n).value().sum();
}

}  // namespace

TEST(Kl, IdentityAndUnitShift) {
  M m = M::Random(4, 3), s = M::Random(4, 3).cwiseAbs().array() + 0.1;
  EXPECT_NEAR(kl_scalar(m, s, m, s, 2), 0.0, 1e-12);
  EXPECT_NEAR(kl_scalar(M::Ones(1, 1), M::Ones(1, 1), M::Zero(1, 1), M::Ones(1, 1), 1), 0.5, 1e-12);
}

TEST(Kl, SumsOverNodesPerSample) {
  G g;
  M mq = M::Zero(4, 1), one = M::Ones(4, 1);
  mq(0, 0) = 1;
  mq(3, 0) = 2;
  auto kl = kl_nodes<double>({g.constant(mq), g.constant(one)}, {g.constant(M::Zero(4, 1)), g.constant(one)}, 2).value();
  ASSERT_EQ(kl.rows(), 2);
  EXPECT_NEAR(kl(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(kl(1, 0), 2.0, 1e-12);
  EXPECT_THROW((kl_nodes<double>({g.constant(mq), g.constant(one)}, {g.constant(M::Zero(2, 1)), g.constant(M::Ones(2, 1))}, 2)),
               ShapeError);
}

// Closed form against E_q[log q(x) - log p(x)] estimated by sampling.
TEST(Kl, MatchesMonteCarloEstimate) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  for (int pair = 0; pair < 10; ++pair) {
    const double mq = n(rng), sq = u(rng), mp = n(rng), sp = u(rng);
    const int S = 100000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < S; ++i) {
      const double x = mq + sq * n(rng);
      const double lq = -std::log(sq) - 0.5 * ((x - mq) / sq) * ((x - mq) / sq);
      const double lp = -std::log(sp) - 0.5 * ((x - mp) / sp) * ((x - mp) / sp);
      sum += lq - lp;
      sum2 += (lq - lp) * (lq - lp);
    }
    const double mc = sum / S;
    const double se = std::sqrt((sum2 / S - mc * mc) / S);
    const double closed = kl_scalar(M::Constant(1, 1, mq), M::Constant(1, 1, sq), M::Constant(1, 1, mp), M::Constant(1, 1, sp), 1);
    EXPECT_LE(std::abs(closed - mc), 3 * se + 1e-12) << "pair " << pair;
  }
}

TEST(DelayEntropy, UniformOneHotAndZeroWeight) {
  G g;
  std::vector<ad::Var<double>> uniform{g.constant(M::Constant(1, 4, 0.25))};
  EXPECT_NEAR(delay_entropy_loss<double>(uniform, 1.0, 1e-12).scalar(), std::log(4.0), 1e-9);
  M hot = M::Zero(1, 4);
  hot(0, 2) = 1;
  std::vector<ad::Var<double>> onehot{g.constant(hot)};
  EXPECT_LE(std::abs(delay_entropy_loss<double>(onehot, 1.0, 1e-8).scalar()), 1e-6);
  EXPECT_EQ(delay_entropy_loss<double>(uniform, 0.0, 1e-8).scalar(), 0.0);
  std::vector<ad::Var<double>> seq(7, g.constant(M::Constant(3, 5, 0.2)));
  EXPECT_NEAR(delay_entropy_loss<double>(seq, 0.3, 1e-8).scalar(), 0.3 * 7 * std::log(5.0), 1e-4);
}

TEST(Filter, LengthsDeterminismAndHistories) {
  auto spec = make_spec("chain", "hold", 40);
  WorldModel<double> wm(spec, build_partition(spec.field_schema, PartitionStrategy::field_wise), tiny_model_config(3), 1);
  auto steps = random_steps(spec, 3, 6, 2);
  std::mt19937_64 r1(4), r2(4);
  G g1, g2;
  auto a = rollout_filter(g1, wm, steps, r1);
  auto b = rollout_filter(g2, wm, steps, r2);
  for (auto n : {a.h.size(), a.z.size(), a.features.size(), a.gates.size(), a.prior.size(), a.posterior.size(),
                 a.histories.size()})
    EXPECT_EQ(n, 6u);
  for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(a.features[t].value(), b.features[t].value());
  // Newest-first history: slot 0 is the action stored at t, slot k the one k steps earlier, zero before the segment.
  EXPECT_EQ(a.histories[4][0], steps.action[4]);
  EXPECT_EQ(a.histories[4][2], steps.action[2]);
  EXPECT_TRUE(a.histories[1][2].isZero());
}

TEST(Filter, ZeroInitializedGaussianHeadsGiveZeroKl) {
  for (auto mode : {PosteriorMode::message_passing, PosteriorMode::global_mlp}) {
    auto spec = make_spec("pendulum", "balance", 30);
    auto cfg = tiny_model_config();
    cfg.posterior_mode = mode;
    WorldModel<double> wm(spec, build_partition(spec.field_schema, PartitionStrategy::element_wise), cfg, 3);
    wm.ssm().prior_net().zero_output();
    wm.ssm().posterior_out().zero_output();
    auto steps = random_steps(spec, 2, 5, 1);
    G g;
    std::mt19937_64 rng(0);
    auto loss = world_model_loss(g, wm, steps, WorldModelConfig{}, rng);
    EXPECT_NEAR(loss.report.kl, 0.0, 1e-12) << to_string(mode);
  }
}

TEST(WorldModelLoss, DecompositionAndBetaLinearity) {
  auto spec = make_spec("chain", "travel", 40);
  WorldModel<double> wm(spec, build_partition(spec.field_schema, PartitionStrategy::chunk_wise, 4), tiny_model_config(), 5);
  auto steps = random_steps(spec, 3, 7, 3);
  WorldModelConfig cfg;
  cfg.beta = 2.5;
  cfg.lambda_ent = 0.4;
  std::mt19937_64 r1(1), r2(1);
  G g1, g2;
  auto a = world_model_loss(g1, wm, steps, cfg, r1).report;
  cfg.beta = 0;
  auto b = world_model_loss(g2, wm, steps, cfg, r2).report;
  EXPECT_NEAR(a.total, a.recon + a.reward + a.continuation + 2.5 * a.kl + a.delay_entropy, 1e-6);
  EXPECT_GE(a.kl, 0.0);
  EXPECT_GE(a.delay_entropy, 0.0);
  EXPECT_LE(a.delay_entropy, 0.4 * 7 * std::log(3.0) + 1e-6);
  EXPECT_NEAR(b.total, b.recon + b.reward + b.continuation + b.delay_entropy, 1e-12);
  EXPECT_EQ(b.kl, a.kl);
  ASSERT_EQ(a.gate_mean.size(), 3u);
  EXPECT_NEAR(a.gate_mean[0] + a.gate_mean[1] + a.gate_mean[2], 1.0, 1e-9);
  auto j = to_json(a);
  for (const char* key : {"recon", "reward", "cont", "kl", "delay_entropy", "total", "gate_mean"}) EXPECT_TRUE(j.contains(key));
}

TEST(WorldModelLoss, TotalGradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto spec = make_spec(s % 2 ? "chain" : "pendulum", s % 2 ? "hold" : "swingup", 30);
    auto cfg = tiny_model_config(3);
    cfg.posterior_mode = s % 3 == 0 ? PosteriorMode::global_mlp : PosteriorMode::message_passing;
    WorldModel<double> wm(spec, build_partition(spec.field_schema, PartitionStrategy::element_wise), cfg, s);
    auto steps = random_steps(spec, 2, 4, s);
    WorldModelConfig wc;
    wc.lambda_ent = 0.1;
    // A random subset of parameter tensors keeps the finite-difference sweep cheap.
    auto all = wm.params().group();
    std::vector<ad::Parameter<double>*> pick;
    std::mt19937_64 prng(s);
    std::shuffle(all.begin(), all.end(), prng);
    pick.assign(all.begin(), all.begin() + 6);
    const double err = gradient_rel_error(pick, [&](G& g) {
      std::mt19937_64 rng(s + 50);
      return world_model_loss(g, wm, steps, wc, rng).total;
    });
    EXPECT_LE(err, 1e-4) << "seed " << s;
  }
}

TEST(TrainingStep, EveryParameterReceivesGradient) {
  for (auto mode : {PosteriorMode::message_passing, PosteriorMode::global_mlp}) {
    auto spec = make_spec("pendulum", "balance", 40);
    auto cfg = tiny_model_config(3);
    cfg.posterior_mode = mode;
    WorldModel<double> wm(spec, build_partition(spec.field_schema, PartitionStrategy::element_wise), cfg, 2);
    auto steps = random_steps(spec, 4, 8, 9);
    G g;
    std::mt19937_64 rng(0);
    auto loss = world_model_loss(g, wm, steps, WorldModelConfig{}, rng);
    wm.params().zero_grad();
    g.backward(loss.total);
    for (const auto& p : wm.params()) EXPECT_GT(p.grad.size() ? p.grad.norm() : 0.0, 0.0) << p.name;
  }
}

TEST(TrainingStep, NonFiniteTermIsNamed) {
  auto spec = make_spec("pendulum", "balance", 40);
  WorldModel<double> wm(spec, build_partition(spec.field_schema, PartitionStrategy::field_wise), tiny_model_config(), 2);
  auto steps = random_steps(spec, 2, 4, 1);
  steps.reward[2](1, 0) = std::numeric_limits<double>::infinity();
  optim::Optimizer<double> opt(wm.params().group(), WorldModelConfig{}.optimizer_config());
  std::mt19937_64 rng(0);
  const auto before = wm.params().find("heads/reward/out/bias")->value;
  try {
    training_step(wm, opt, steps, WorldModelConfig{}, rng);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("reward"), std::string::npos) << e.what();
  }
  EXPECT_EQ(wm.params().find("heads/reward/out/bias")->value, before);
}

// Constant observations and zero rewards: reconstruction and reward losses
// must come down over 200 updates.
TEST(TrainingStep, LossesDecreaseOnConstantData) {
  auto spec = make_spec("pendulum", "balance", 40);
  WorldModel<float> wm(spec, build_partition(spec.field_schema, PartitionStrategy::field_wise), tiny_model_config(), 0);
  const std::size_t B = 4, L = 8;
  StepTensors<float> steps;
  for (std::size_t t = 0; t < L; ++t) {
    steps.obs.push_back((ad::Matrix<float>(B, 3) << ad::Matrix<float>::Constant(B, 1, 0.6f),
                         ad::Matrix<float>::Constant(B, 1, -0.8f), ad::Matrix<float>::Constant(B, 1, 0.25f))
                            .finished());
    steps.action.push_back(ad::Matrix<float>::Zero(B, 1));
    steps.reward.push_back(ad::Matrix<float>::Zero(B, 1));
    steps.cont.push_back(ad::Matrix<float>::Ones(B, 1));
  }
  WorldModelConfig cfg;
  cfg.lr = 3e-3;
  optim::Optimizer<float> opt(wm.params().group(), cfg.optimizer_config());
  std::mt19937_64 rng(1);
  std::vector<double> recon, reward;
  for (int i = 0; i < 200; ++i) {
    auto r = training_step(wm, opt, steps, cfg, rng);
    recon.push_back(r.recon);
    reward.push_back(r.reward);
  }
  auto avg = [](const std::vector<double>& v, std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += v[i];
    return s / static_cast<double>(b - a);
  };
  for (const auto* series : {&recon, &reward}) {
    const double first = avg(*series, 0, 40), mid = avg(*series, 80, 120), last = avg(*series, 160, 200);
    EXPECT_LT(mid, first);
    EXPECT_LT(last, mid);
  }
}
