// Command line front end: run one experiment, sweep a parameter grid,
// compare metrics files, or report a partition.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/experiment.hpp"

namespace {

fedsim::ConfigEntries collect_entries(const std::string& config_path,
                                      const std::vector<std::string>& sets) {
  fedsim::ConfigEntries entries;
  if (!config_path.empty()) entries = fedsim::load_config_file(config_path);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    entries.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return entries;
}

void print_run_line(const fedsim::RunResult& result) {
  std::printf("%-28s rounds=%llu %s=%.6f wall=%.0fms\n",
              result.config.run_id.c_str(),
              static_cast<unsigned long long>(result.config.rounds),
              result.eval_metric.c_str(), result.final_eval,
              result.wall_ms_total);
}

std::string value_slug(std::string v) {
  for (char& c : v) {
    if (c == ',' || c == '/' || c == ' ') c = '-';
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsim: federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs";
  std::vector<std::string> sets;

  auto* run_cmd = app.add_subcommand("run", "run one experiment");
  run_cmd->add_option("--config", config_path, "config file");
  run_cmd->add_option("--set", sets, "override: key=value (repeatable)");
  run_cmd->add_option("--out", out_dir, "output directory");

  std::vector<std::string> grids;
  std::size_t sweep_seeds = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid over listed parameters");
  sweep_cmd->add_option("--config", config_path, "config file");
  sweep_cmd->add_option("--set", sets, "override: key=value (repeatable)");
  sweep_cmd->add_option("--grid", grids, "axis: key=v1,v2,... (repeatable)")
      ->required();
  sweep_cmd->add_option("--seeds", sweep_seeds, "replicate each point over N seeds");
  sweep_cmd->add_option("--out", out_dir, "output directory");

  std::vector<std::string> compare_files;
  auto* compare_cmd = app.add_subcommand("compare", "compare metrics files");
  compare_cmd->add_option("files", compare_files, "metrics.csv paths")
      ->required()
      ->expected(2, -1);

  auto* part_cmd = app.add_subcommand("partition-report", "show the client partition");
  part_cmd->add_option("--config", config_path, "config file");
  part_cmd->add_option("--set", sets, "override: key=value (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const auto cfg = fedsim::config_from_entries(collect_entries(config_path, sets));
      const auto result = fedsim::run_experiment(cfg, out_dir);
      print_run_line(result);
      std::printf("wrote %s/%s/{metrics.csv,summary.json,checkpoint.bin}\n",
                  out_dir.c_str(), cfg.run_id.c_str());
    } else if (sweep_cmd->parsed()) {
      const auto base_entries = collect_entries(config_path, sets);
      std::vector<std::pair<std::string, std::vector<std::string>>> axes;
      for (const std::string& grid : grids) {
        const auto eq = grid.find('=');
        if (eq == std::string::npos) {
          throw std::invalid_argument("--grid expects key=v1,v2,...");
        }
        std::vector<std::string> values;
        std::string rest = grid.substr(eq + 1);
        std::size_t start = 0;
        while (start <= rest.size()) {
          const auto comma = rest.find(',', start);
          values.push_back(rest.substr(start, comma - start));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        axes.emplace_back(grid.substr(0, eq), values);
      }
      std::vector<fedsim::ConfigEntries> points{{}};
      std::vector<std::string> names{""};
      for (const auto& [key, values] : axes) {
        std::vector<fedsim::ConfigEntries> next_points;
        std::vector<std::string> next_names;
        const std::string short_key = key.substr(key.rfind('.') + 1);
        for (std::size_t i = 0; i < points.size(); ++i) {
          for (const std::string& v : values) {
            auto entries = points[i];
            entries.emplace_back(key, v);
            next_points.push_back(std::move(entries));
            next_names.push_back(names[i] + "_" + short_key + value_slug(v));
          }
        }
        points = std::move(next_points);
        names = std::move(next_names);
      }
      const auto base_cfg = fedsim::config_from_entries(base_entries);
      for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t s = 0; s < sweep_seeds; ++s) {
          auto entries = base_entries;
          entries.insert(entries.end(), points[i].begin(), points[i].end());
          std::string run_id = base_cfg.run_id + names[i];
          if (sweep_seeds > 1) {
            entries.emplace_back("seed", std::to_string(base_cfg.seed + s));
            run_id += "_s" + std::to_string(base_cfg.seed + s);
          }
          entries.emplace_back("run.id", run_id);
          const auto result =
              fedsim::run_experiment(fedsim::config_from_entries(entries), out_dir);
          print_run_line(result);
        }
      }
    } else if (compare_cmd->parsed()) {
      const auto cmp = fedsim::compare_runs(compare_files);
      std::cout << fedsim::comparison_table(cmp);
    } else if (part_cmd->parsed()) {
      const auto cfg = fedsim::config_from_entries(collect_entries(config_path, sets));
      const auto part = fedsim::make_partition(cfg.n_examples, cfg.num_clients,
                                               cfg.partition, cfg.seed);
      std::printf("partition kind=%s n=%zu K=%zu\n", to_string(cfg.partition.kind),
                  cfg.n_examples, cfg.num_clients);
      for (std::size_t c = 0; c < part.client_shares.size(); ++c) {
        const double frac = 100.0 * static_cast<double>(part.client_shares[c]) /
                            static_cast<double>(cfg.n_examples);
        std::printf("  client %2zu: %4llu examples (%5.1f%%)\n", c,
                    static_cast<unsigned long long>(part.client_shares[c]), frac);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
