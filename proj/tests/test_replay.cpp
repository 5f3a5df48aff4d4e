#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "fieldnode/trace.hpp"
#include "support.hpp"

using namespace fieldnode;
using fieldnode::testing::random_episode;

namespace {

Episode counting_episode(std::size_t n, double tag = 0) {
  auto schema = make_spec("pendulum", "balance").field_schema;
  Episode ep;
  for (std::size_t t = 0; t < n; ++t)
    ep.push_back({make_observation(schema, {tag, static_cast<double>(t), 0}, static_cast<long>(t)),
                  {0.0},
                  static_cast<double>(t),
                  t + 1 < n,
                  0});
  return ep;
}

}  // namespace

TEST(Replay, SegmentsStayInsideOneEpisode) {
  ReplayDataset d;
  d.add_episode(counting_episode(1000));
  std::mt19937_64 rng(1);
  auto b = d.sample_segments(16, 64, rng);
  ASSERT_EQ(b.batch(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(b.sequences[i].size(), 64u);
    EXPECT_LE(b.refs[i].start, 936u);
    for (std::size_t t = 0; t < 64; ++t) EXPECT_EQ(b.sequences[i][t].reward, static_cast<double>(b.refs[i].start + t));
  }
}

TEST(Replay, NotReadyWhenSegmentTooLong) {
  ReplayDataset d;
  std::mt19937_64 rng(1);
  EXPECT_THROW(d.sample_segments(1, 5, rng), NotReady);
  d.add_episode(counting_episode(10));
  EXPECT_THROW(d.sample_segments(1, 11, rng), NotReady);
  EXPECT_NO_THROW(d.sample_segments(1, 10, rng));
}

TEST(Replay, SameRngStateSameBatch) {
  ReplayDataset d;
  d.add_episode(counting_episode(300));
  d.add_episode(counting_episode(120, 1));
  std::mt19937_64 a(5), b(5);
  auto x = d.sample_segments(8, 20, a);
  auto y = d.sample_segments(8, 20, b);
  EXPECT_EQ(x.sequences, y.sequences);
}

TEST(Replay, StartsAreUniformOverValidPositions) {
  ReplayDataset d;
  d.add_episode(counting_episode(12));
  d.add_episode(counting_episode(6, 1));
  // valid starts: 12-5+1 = 8 in the first, 2 in the second
  std::mt19937_64 rng(2);
  std::vector<int> counts(10, 0);
  const int n = 50000;
  auto b = d.sample_segments(n, 5, rng);
  for (const auto& r : b.refs) ++counts[r.episode_id == 0 ? r.start : 8 + r.start];
  // 0.999 quantile of chi-square with 9 dof
  double chi2 = 0;
  for (int c : counts) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  EXPECT_LT(chi2, 27.877);
}

TEST(Replay, FifoEvictionOfWholeEpisodes) {
  ReplayDataset d(250);
  d.add_episode(counting_episode(100, 0));
  d.add_episode(counting_episode(100, 1));
  d.add_episode(counting_episode(100, 2));
  EXPECT_EQ(d.episode_count(), 2u);
  EXPECT_EQ(d.steps(), 200u);
  EXPECT_THROW(d.episode(0), StateError);
  EXPECT_EQ(d.episode(2).front().observation.flat()[0], 2.0);
}

TEST(Replay, SegmentsReassembleTheEpisode) {
  auto ep = random_episode(make_spec("chain", "travel", 40), 2, 3);
  ReplayDataset d;
  const auto id = d.add_episode(ep);
  EXPECT_EQ(d.episode(id), ep);
  std::mt19937_64 rng(0);
  auto b = d.sample_segments(64, 8, rng);
  for (std::size_t i = 0; i < b.batch(); ++i)
    for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(b.sequences[i][t], ep[b.refs[i].start + t]);
}

TEST(Replay, ConcurrentReadersSeeConsistentSegments) {
  ReplayDataset d(2000);
  d.add_episode(counting_episode(100, 0));
  std::atomic<bool> stop = false;
  std::atomic<int> bad = 0;
  std::vector<std::thread> readers;
  for (int r = 0; r < 3; ++r)
    readers.emplace_back([&, r] {
      std::mt19937_64 rng(static_cast<std::uint64_t>(r));
      while (!stop) {
        auto b = d.sample_segments(4, 50, rng);
        for (const auto& s : b.sequences)
          for (std::size_t t = 1; t < s.size(); ++t)
            if (s[t].reward != s[t - 1].reward + 1 || s[t].observation.flat()[0] != s[0].observation.flat()[0]) ++bad;
      }
    });
  for (int e = 1; e < 60; ++e) d.add_episode(counting_episode(100, e));
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST(Replay, TraceRoundTrip) {
  auto spec = make_spec("pendulum", "balance", 30);
  auto ep = random_episode(spec, 3, 11);
  std::stringstream ss;
  write_trace(ss, ep);
  std::string first;
  std::getline(std::stringstream(ss.str()), first);
  auto j = nlohmann::json::parse(first);
  for (const char* key : {"t", "obs", "action", "reward", "continuation", "delta"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j["obs"].contains("angle"));
  auto back = read_trace(ss, spec.field_schema);
  ASSERT_EQ(back.size(), ep.size());
  for (std::size_t t = 0; t < ep.size(); ++t) {
    EXPECT_EQ(back[t].observation.timestamp, ep[t].observation.timestamp);
    EXPECT_EQ(back[t].delta, ep[t].delta);
    EXPECT_EQ(back[t].continuation, ep[t].continuation);
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_DOUBLE_EQ(back[t].observation.flat()[k], ep[t].observation.flat()[k]);
  }
}
