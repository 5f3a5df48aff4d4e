// fieldnode command-line entry point.
//
//   fieldnode train            --config c.json [--seed 0,1,2] [--out runs/x] [--tau-max 3] [--episodes 100]
//   fieldnode ablate-posterior --config c.json ...
//   fieldnode sweep-partition  --config c.json [--strategies field_wise,element_wise,...] ...
//   fieldnode transfer         --config target.json --source 'runs/src/seed_{seed}/checkpoint.fnck' ...
//   fieldnode plot             --out plots/ runs/a [runs/b]

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fieldnode/fieldnode.hpp"

namespace {

using namespace fieldnode;

// "0,1,2", "0-4" or a mix ("0-2,7").
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dash)), hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw ConfigError("empty seed range " + item);
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("malformed seed list '" + text + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

struct CommonOptions {
  std::string config;
  std::string seeds;
  std::string out = "runs";
  std::optional<int> tau_max;
  std::optional<int> episodes;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seeds, "seed list, e.g. 0,1,2 or 0-4 (overrides the config)");
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--tau-max", o.tau_max, "maximum observation delay (0 disables the delay)");
  cmd->add_option("--episodes", o.episodes, "collected episodes per seed");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = load_config(o.config);
  if (!o.seeds.empty()) c.seeds = parse_seed_list(o.seeds);
  if (o.tau_max) c.tau_max = *o.tau_max;
  if (o.episodes) c.total_episodes = *o.episodes;
  c.validate();
  return c;
}

int status_of(const std::vector<RunRecord>& records) {
  for (const auto& r : records)
    if (r.failed) return 1;
  return 0;
}

std::vector<RunRecord> load_records(const fs::path& dir) {
  std::vector<RunRecord> out;
  if (!fs::is_directory(dir)) throw StateError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "record.json")) files.push_back(e.path() / "record.json");
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(load_run_record(f));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fieldnode: delay-aware structured world-model agent"};
  app.require_subcommand(1);

  CommonOptions train_o, ablate_o, sweep_o, transfer_o;
  auto* train = app.add_subcommand("train", "train one config on every seed");
  add_common(train, train_o);

  auto* ablate = app.add_subcommand("ablate-posterior", "message-passing vs global-MLP posterior on matched seeds");
  add_common(ablate, ablate_o);

  auto* sweep = app.add_subcommand("sweep-partition", "identical runs differing only in the partition strategy");
  add_common(sweep, sweep_o);
  std::string strategies = "field_wise,joint_wise,chunk_wise,element_wise";
  sweep->add_option("--strategies", strategies, "comma-separated strategies")->capture_default_str();

  auto* transfer = app.add_subcommand("transfer", "scratch vs transfer-initialized runs of a target config");
  add_common(transfer, transfer_o);
  std::string source;
  transfer->add_option("--source", source, "source checkpoint; '{seed}' expands per seed (default: config transfer_source)");

  auto* plot = app.add_subcommand("plot", "re-plot learning curves from run directories");
  std::vector<std::string> plot_inputs;
  std::string plot_out = "plots";
  plot->add_option("runs", plot_inputs, "run directories holding seed_*/record.json")->required()->check(CLI::ExistingDirectory);
  plot->add_option("--out", plot_out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto c = resolve(train_o);
      return status_of(run(c, train_o.out));
    }
    if (*ablate) {
      const auto res = run_ablation_posterior(resolve(ablate_o), ablate_o.out);
      for (const auto& r : res.paired)
        std::cout << "seed " << r.seed << ": message_passing " << r.a << ", global_mlp " << r.b << ", difference "
                  << r.difference() << '\n';
      return status_of(res.message_passing) | status_of(res.global_mlp);
    }
    if (*sweep) {
      std::vector<PartitionStrategy> list;
      std::stringstream ss(strategies);
      std::string s;
      while (std::getline(ss, s, ','))
        if (!s.empty()) list.push_back(parse_strategy(s));
      const auto res = run_partition_sweep(resolve(sweep_o), list, sweep_o.out);
      int rc = 0;
      for (std::size_t i = 0; i < res.strategies.size(); ++i) {
        std::cout << to_string(res.strategies[i]) << ": N=" << (res.records[i].empty() ? 0 : res.records[i][0].node_count)
                  << '\n';
        rc |= status_of(res.records[i]);
      }
      return rc;
    }
    if (*transfer) {
      auto c = resolve(transfer_o);
      const std::string src = !source.empty() ? source : c.transfer_source.value_or("");
      if (src.empty()) throw ConfigError("transfer needs --source or transfer_source in the config");
      const auto res = run_transfer(c, src, transfer_o.out);
      std::cout << "mean AUC scratch " << res.comparison.mean_scratch_auc << ", transfer "
                << res.comparison.mean_transfer_auc << "; transfer reached 50% of scratch final no later on "
                << res.comparison.seeds_no_later << "/" << res.comparison.rows.size() << " seeds\n";
      return status_of(res.scratch) | status_of(res.transfer);
    }
    if (*plot) {
      std::vector<CurveSeries> series;
      for (const auto& in : plot_inputs) {
        const fs::path dir(in);
        const auto label = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
        series.push_back({label, learning_curve(load_records(dir))});
        emit_curve(plot_out, label + "_learning_curve", label + " training return", series.back().points);
      }
      if (series.size() > 1) emit_overlay(plot_out, "overlay", "training return", series);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
