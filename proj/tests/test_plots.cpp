#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "fieldnode/plots.hpp"

using namespace fieldnode;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count(const std::string& text, const std::string& pattern) {
  const std::regex re(pattern);
  return static_cast<std::size_t>(std::distance(std::sregex_iterator(text.begin(), text.end(), re), std::sregex_iterator()));
}

}  // namespace

TEST(Plots, StatisticsAreMeanMinMaxAcrossSeeds) {
  const auto pts = curve_statistics({1, 2, 3}, {{1, 2, 3}, {3, 2, 1}, {2, 8, 2}});
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0], (CurvePoint{1, 2.0, 1.0, 3.0}));
  EXPECT_EQ(pts[1], (CurvePoint{2, 4.0, 2.0, 8.0}));
  EXPECT_EQ(pts[2], (CurvePoint{3, 2.0, 1.0, 3.0}));
}

TEST(Plots, OnlyTheCommonPrefixIsSummarized) {
  EXPECT_EQ(curve_statistics({1, 2, 3}, {{1, 2, 3}, {1}}).size(), 1u);
  EXPECT_TRUE(curve_statistics({1, 2}, {}).empty());
}

TEST(Plots, FiveSeedSetGivesOneCurveAndOneCsv) {
  TempDir dir("fieldnode_plots_five");
  std::vector<std::vector<double>> seeds;
  for (int s = 0; s < 5; ++s) seeds.push_back({0.1 * s, 1.0 + s, 2.5 - s});
  ASSERT_TRUE(emit_curve(dir.path, "curve", "test", curve_statistics({1, 2, 3}, seeds)));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path)) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 2u);
  EXPECT_EQ(slurp(dir.path / "curve.csv").substr(0, 19), "episode,mean,lo,hi\n");
  EXPECT_EQ(slurp(dir.path / "curve.svg").rfind("<svg", 0), 0u);
}

TEST(Plots, CsvRoundTripsExactly) {
  TempDir dir("fieldnode_plots_roundtrip");
  const auto pts = curve_statistics({1, 2, 3, 4}, {{0.1, 1.0 / 3.0, 2e-17, 1e9}, {-4.25, 7.0 / 9.0, 3.3, 6.02e23}});
  write_curve_csv(dir.path / "c.csv", pts);
  const auto back = read_curve_csv(dir.path / "c.csv");
  EXPECT_EQ(back, pts);
  write_curve_csv(dir.path / "d.csv", back);
  EXPECT_EQ(slurp(dir.path / "c.csv"), slurp(dir.path / "d.csv"));
}

TEST(Plots, TransferOverlayHasExactlyTwoLabeledSeries) {
  TempDir dir("fieldnode_plots_overlay");
  const auto a = curve_statistics({1, 2}, {{1, 2}});
  const auto b = curve_statistics({1, 2}, {{2, 3}});
  ASSERT_TRUE(emit_overlay(dir.path, "overlay", "transfer", {{"scratch", a}, {"transfer", b}}));
  const auto svg = slurp(dir.path / "overlay.svg");
  EXPECT_EQ(count(svg, "<g class=\"series\""), 2u);
  EXPECT_EQ(count(svg, "data-label=\"scratch\""), 1u);
  EXPECT_EQ(count(svg, "data-label=\"transfer\""), 1u);
  EXPECT_TRUE(fs::exists(dir.path / "overlay_scratch.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "overlay_transfer.csv"));
}

TEST(Plots, EmptyRecordsAreAWarnedNoOp) {
  TempDir dir("fieldnode_plots_empty");
  EXPECT_FALSE(emit_curve(dir.path / "sub", "curve", "t", {}));
  EXPECT_FALSE(emit_overlay(dir.path / "sub", "overlay", "t", {{"a", {}}, {"b", {}}}));
  EXPECT_FALSE(fs::exists(dir.path / "sub"));
}

TEST(Plots, MalformedCsvIsRejected) {
  TempDir dir("fieldnode_plots_bad");
  std::ofstream(dir.path / "x.csv") << "a,b\n1,2\n";
  EXPECT_THROW(read_curve_csv(dir.path / "x.csv"), ConfigError);
  std::ofstream(dir.path / "y.csv") << "episode,mean,lo,hi\n1;2;3;4\n";
  EXPECT_THROW(read_curve_csv(dir.path / "y.csv"), ConfigError);
}
