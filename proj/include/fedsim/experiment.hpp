// Experiment harness: resolves a flat key=value config into a federation
// run, records per-round metrics, and writes plot-ready CSV plus a JSON
// summary and a checkpoint.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/federation.hpp"
#include "fedsim/partition.hpp"

namespace fedsim {

struct ExperimentConfig {
  std::string run_id = "run";

  ModelKind model_kind = ModelKind::mlp_softdice_segmenter;
  std::size_t input_dim = 8;    // linear / classifier input width
  std::size_t classes = 3;      // classifier outputs
  std::size_t grid_size = 6;    // segmenter images are grid x grid
  std::size_t hidden_dim = 24;  // segmenter MLP hidden width
  double weight_decay = 1e-5;

  std::size_t n_examples = 260;
  std::size_t n_eval = 130;
  double data_noise = 0.05;
  double heterogeneity = 0.0;  // client feature-shift spread

  std::size_t num_clients = 13;
  std::uint64_t rounds = 60;
  TransportKind transport = TransportKind::in_process;
  AggregationMode aggregation = AggregationMode::weighted;
  PartitionSpec partition;

  TrainerConfig trainer;
  PrivacyPolicy privacy;
  bool eps2_derived = false;  // eps2 = (2*q*s)^(2/3) * eps1

  std::uint64_t seed = 1;
  std::optional<std::uint64_t> noise_seed;  // defaults to a stream off seed

  ToyModel::Shape model_shape() const;
  SynthSpec synth_spec() const;
  // Policy with defaults resolved: sensitivity 2*gamma, tau targeting q,
  // eps2 derived when requested.
  PrivacyPolicy resolved_privacy() const;
  void validate() const;
};

// Flat "key = value" config text; '#' starts a comment. Keys are dotted,
// lists are comma separated. Later entries win, so CLI overrides append.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries parse_config_text(const std::string& text);
ConfigEntries load_config_file(const std::string& path);
ExperimentConfig config_from_entries(const ConfigEntries& entries);

// Resolved config as canonical "key = value" lines; also what gets hashed.
std::string canonical_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct MetricsRecord {
  std::uint64_t round = 0;
  double global_eval = 0.0;
  double train_loss_mean = 0.0;
  double released_fraction = 1.0;
  double eps_round = 0.0;
  double eps_cum = 0.0;
  bool any_exhausted = false;
  std::vector<double> client_train_loss;  // indexed by client_id
  double wall_ms = 0.0;                   // summary-only, never in the CSV
};

struct RunResult {
  ExperimentConfig config;
  GlobalState final_state;
  std::vector<MetricsRecord> per_round;
  std::string eval_metric;
  bool eval_higher_is_better = true;
  double final_eval = 0.0;
  double wall_ms_total = 0.0;
};

// Runs one experiment end to end. out_dir empty keeps everything in memory;
// otherwise writes <out_dir>/<run_id>/{metrics.csv,summary.json,checkpoint.bin}.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = "");

std::string metrics_to_csv(const RunResult& result);
void write_run_outputs(const RunResult& result, const std::string& out_dir);

// --- run comparison -------------------------------------------------------

struct ComparisonResult {
  std::string eval_metric;
  std::vector<std::string> run_names;
  std::vector<std::uint64_t> rounds;           // common prefix
  std::vector<std::vector<double>> eval_rows;  // eval_rows[i][r] for run i
  std::vector<double> finals;                  // last common-round eval
  std::vector<double> deltas_vs_first;
  bool truncated = false;  // inputs had different lengths
};

ComparisonResult compare_runs(const std::vector<std::string>& csv_paths);
std::string comparison_table(const ComparisonResult& cmp);

}  // namespace fedsim
