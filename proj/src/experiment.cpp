#include "fedsim/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fedsim {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing chars");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing chars");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + value + "'");
  }
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_u64(key, item));
  }
  if (out.empty()) throw std::invalid_argument("config: empty list for " + key);
  return out;
}

}  // namespace

ToyModel::Shape ExperimentConfig::model_shape() const {
  ToyModel::Shape shape;
  shape.kind = model_kind;
  shape.weight_decay = weight_decay;
  switch (model_kind) {
    case ModelKind::linear_regression:
      shape.input_dim = input_dim;
      shape.output_dim = 1;
      break;
    case ModelKind::logistic_classifier:
      shape.input_dim = input_dim;
      shape.output_dim = classes;
      break;
    case ModelKind::mlp_softdice_segmenter:
      shape.input_dim = grid_size * grid_size;
      shape.output_dim = grid_size * grid_size;
      shape.hidden_dim = hidden_dim;
      break;
  }
  return shape;
}

SynthSpec ExperimentConfig::synth_spec() const {
  SynthSpec spec;
  spec.kind = model_kind;
  spec.input_dim = input_dim;
  spec.output_dim = model_kind == ModelKind::logistic_classifier ? classes : 1;
  spec.grid_size = grid_size;
  spec.noise = data_noise;
  return spec;
}

PrivacyPolicy ExperimentConfig::resolved_privacy() const {
  PrivacyPolicy policy = privacy;
  if (policy.sensitivity < 0.0) policy.sensitivity = 2.0 * policy.gamma;
  if (policy.tau_percentile < 0.0) {
    policy.tau_percentile = 100.0 * (1.0 - policy.q);
    if (policy.tau_percentile >= 100.0) policy.tau_percentile = 0.0;
  }
  if (eps2_derived) {
    policy.eps2 = PrivacyPolicy::derive_eps2(policy.q, policy.sensitivity, policy.eps1);
  }
  return policy;
}

void ExperimentConfig::validate() const {
  if (run_id.empty()) throw std::invalid_argument("config: run.id is empty");
  if (n_examples < num_clients) {
    throw std::invalid_argument("config: data.n must be >= federation.clients");
  }
  if (n_eval < 1) throw std::invalid_argument("config: data.eval_n must be >= 1");
  if (num_clients < 1) throw std::invalid_argument("config: clients must be >= 1");
  trainer.validate();
  resolved_privacy().validate();
}

ConfigEntries parse_config_text(const std::string& text) {
  ConfigEntries entries;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    }
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

ConfigEntries load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ExperimentConfig config_from_entries(const ConfigEntries& entries) {
  ExperimentConfig cfg;
  cfg.privacy.sensitivity = -1.0;     // resolve to 2 * gamma
  cfg.privacy.tau_percentile = -1.0;  // resolve to the percentile targeting q
  for (const auto& [key, value] : entries) {
    if (key == "run.id") cfg.run_id = value;
    else if (key == "model.kind") cfg.model_kind = model_kind_from_string(value);
    else if (key == "model.input_dim") cfg.input_dim = parse_u64(key, value);
    else if (key == "model.classes") cfg.classes = parse_u64(key, value);
    else if (key == "model.grid") cfg.grid_size = parse_u64(key, value);
    else if (key == "model.hidden") cfg.hidden_dim = parse_u64(key, value);
    else if (key == "model.weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "data.n") cfg.n_examples = parse_u64(key, value);
    else if (key == "data.eval_n") cfg.n_eval = parse_u64(key, value);
    else if (key == "data.noise") cfg.data_noise = parse_double(key, value);
    else if (key == "data.heterogeneity") cfg.heterogeneity = parse_double(key, value);
    else if (key == "partition.kind") cfg.partition.kind = partition_kind_from_string(value);
    else if (key == "partition.largest_share") cfg.partition.largest_share = parse_double(key, value);
    else if (key == "partition.shares") cfg.partition.shares = parse_u64_list(key, value);
    else if (key == "federation.clients") cfg.num_clients = parse_u64(key, value);
    else if (key == "federation.rounds") cfg.rounds = parse_u64(key, value);
    else if (key == "federation.transport") cfg.transport = transport_kind_from_string(value);
    else if (key == "server.aggregation") cfg.aggregation = aggregation_mode_from_string(value);
    else if (key == "trainer.eta") cfg.trainer.eta = parse_double(key, value);
    else if (key == "trainer.beta1") cfg.trainer.beta1 = parse_double(key, value);
    else if (key == "trainer.beta2") cfg.trainer.beta2 = parse_double(key, value);
    else if (key == "trainer.epsilon") cfg.trainer.epsilon = parse_double(key, value);
    else if (key == "trainer.epochs") cfg.trainer.num_local_epochs = static_cast<std::uint32_t>(parse_u64(key, value));
    else if (key == "trainer.batch") cfg.trainer.batch_size = static_cast<std::uint32_t>(parse_u64(key, value));
    else if (key == "trainer.momentum") cfg.trainer.momentum_mode = momentum_mode_from_string(value);
    else if (key == "trainer.restart_counter") {
      if (value == "keep") cfg.trainer.restart_resets_counter = false;
      else if (value == "reset") cfg.trainer.restart_resets_counter = true;
      else throw std::invalid_argument("config: trainer.restart_counter must be keep or reset");
    }
    else if (key == "privacy.mode") cfg.privacy.mode = gate_mode_from_string(value);
    else if (key == "privacy.q") cfg.privacy.q = parse_double(key, value);
    else if (key == "privacy.gamma") cfg.privacy.gamma = parse_double(key, value);
    else if (key == "privacy.sensitivity") cfg.privacy.sensitivity = parse_double(key, value);
    else if (key == "privacy.tau_percentile") cfg.privacy.tau_percentile = parse_double(key, value);
    else if (key == "privacy.eps1") cfg.privacy.eps1 = parse_double(key, value);
    else if (key == "privacy.eps2") {
      if (value == "derived") cfg.eps2_derived = true;
      else { cfg.eps2_derived = false; cfg.privacy.eps2 = parse_double(key, value); }
    }
    else if (key == "privacy.eps3") cfg.privacy.eps3 = parse_double(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "noise_seed") cfg.noise_seed = parse_u64(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return cfg;
}

std::string canonical_config(const ExperimentConfig& cfg) {
  const PrivacyPolicy policy = cfg.resolved_privacy();
  std::ostringstream out;
  out << "run.id = " << cfg.run_id << "\n";
  out << "model.kind = " << to_string(cfg.model_kind) << "\n";
  out << "model.input_dim = " << cfg.input_dim << "\n";
  out << "model.classes = " << cfg.classes << "\n";
  out << "model.grid = " << cfg.grid_size << "\n";
  out << "model.hidden = " << cfg.hidden_dim << "\n";
  out << "model.weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
  out << "data.n = " << cfg.n_examples << "\n";
  out << "data.eval_n = " << cfg.n_eval << "\n";
  out << "data.noise = " << fmt_double(cfg.data_noise) << "\n";
  out << "data.heterogeneity = " << fmt_double(cfg.heterogeneity) << "\n";
  out << "partition.kind = " << to_string(cfg.partition.kind) << "\n";
  out << "partition.largest_share = " << fmt_double(cfg.partition.largest_share) << "\n";
  out << "partition.shares = ";
  for (std::size_t i = 0; i < cfg.partition.shares.size(); ++i) {
    if (i > 0) out << ",";
    out << cfg.partition.shares[i];
  }
  out << "\n";
  out << "federation.clients = " << cfg.num_clients << "\n";
  out << "federation.rounds = " << cfg.rounds << "\n";
  // transport is deliberately absent: runs are transport-invariant, so the
  // hash (and with it the checkpoint) must be too
  out << "server.aggregation = " << to_string(cfg.aggregation) << "\n";
  out << "trainer.eta = " << fmt_double(cfg.trainer.eta) << "\n";
  out << "trainer.beta1 = " << fmt_double(cfg.trainer.beta1) << "\n";
  out << "trainer.beta2 = " << fmt_double(cfg.trainer.beta2) << "\n";
  out << "trainer.epsilon = " << fmt_double(cfg.trainer.epsilon) << "\n";
  out << "trainer.epochs = " << cfg.trainer.num_local_epochs << "\n";
  out << "trainer.batch = " << cfg.trainer.batch_size << "\n";
  out << "trainer.momentum = " << to_string(cfg.trainer.momentum_mode) << "\n";
  out << "trainer.restart_counter = "
      << (cfg.trainer.restart_resets_counter ? "reset" : "keep") << "\n";
  out << "privacy.mode = " << to_string(policy.mode) << "\n";
  out << "privacy.q = " << fmt_double(policy.q) << "\n";
  out << "privacy.gamma = " << fmt_double(policy.gamma) << "\n";
  out << "privacy.sensitivity = " << fmt_double(policy.sensitivity) << "\n";
  out << "privacy.tau_percentile = " << fmt_double(policy.tau_percentile) << "\n";
  out << "privacy.eps1 = " << fmt_double(policy.eps1) << "\n";
  out << "privacy.eps2 = " << fmt_double(policy.eps2) << "\n";
  out << "privacy.eps3 = " << fmt_double(policy.eps3) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "noise_seed = "
      << (cfg.noise_seed.has_value() ? std::to_string(*cfg.noise_seed) : "auto")
      << "\n";
  return out.str();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  return hash_tag(canonical_config(cfg));
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();

  const ToyModel model(cfg.model_shape());
  const SynthSpec spec = cfg.synth_spec();
  SynthDataset train = synth_dataset(spec, derive_seed(cfg.seed, "trainset"), cfg.n_examples);
  SynthDataset eval = synth_dataset(spec, derive_seed(cfg.seed, "evalset"), cfg.n_eval);
  const Batch eval_batch = eval.data.as_batch();

  const Partition part =
      make_partition(cfg.n_examples, cfg.num_clients, cfg.partition, cfg.seed);

  const PrivacyPolicy policy = cfg.resolved_privacy();
  const std::uint64_t train_seed = derive_seed(cfg.seed, "train");
  const std::uint64_t noise_seed =
      cfg.noise_seed.has_value() ? *cfg.noise_seed : derive_seed(cfg.seed, "noise");

  FederationSetup setup;
  setup.model = &model;
  setup.rounds = cfg.rounds;
  setup.initial_state.w = model.init_params(cfg.seed);
  setup.initial_state.mode = cfg.aggregation;
  if (cfg.trainer.momentum_mode == MomentumMode::m_aggregation) {
    AggregatedMoments zero;
    zero.m.assign(model.param_count(), 0.0);
    zero.v.assign(model.param_count(), 0.0);
    setup.initial_state.moments = std::move(zero);
  }
  setup.clients.reserve(cfg.num_clients);
  for (std::size_t c = 0; c < cfg.num_clients; ++c) {
    FederationClientSpec client;
    client.client_id = static_cast<std::uint32_t>(c);
    client.shard.input_dim = train.data.input_dim;
    client.shard.target_dim = train.data.target_dim;
    client.shard.examples.reserve(part.assignments[c].size());
    for (std::size_t idx : part.assignments[c]) {
      client.shard.examples.push_back(train.data.examples[idx]);
    }
    if (cfg.heterogeneity != 0.0 && cfg.num_clients > 1) {
      // Every client sees its own signed shift pattern: a fixed per-site
      // "imaging" offset that moves the feature distribution without
      // touching the task.
      Rng shift_rng(derive_seed(cfg.seed, "shift", c));
      std::vector<double> offsets(client.shard.input_dim);
      for (double& o : offsets) {
        o = cfg.heterogeneity * (shift_rng.uniform() < 0.5 ? -1.0 : 1.0);
      }
      apply_feature_shift(client.shard, offsets);
    }
    client.trainer = cfg.trainer;
    client.gate = policy;
    client.train_seed = train_seed;
    client.noise_seed = noise_seed;
    setup.clients.push_back(std::move(client));
  }

  RunResult result;
  result.config = cfg;
  result.eval_metric = model.eval_metric_name();
  result.eval_higher_is_better = model.eval_higher_is_better();
  result.per_round.reserve(cfg.rounds);

  const double eps_round =
      policy.mode == GateMode::svt ? privacy_cost(policy) : 0.0;
  auto t_round = std::chrono::steady_clock::now();
  setup.observer = [&](const GlobalState& state,
                       const std::vector<RoundContribution>& contributions) {
    MetricsRecord rec;
    rec.round = state.round;
    rec.global_eval = model.evaluate(state.w, eval_batch);
    rec.client_train_loss.assign(cfg.num_clients, 0.0);
    double released = 0.0;
    double loss_sum = 0.0;
    for (const RoundContribution& c : contributions) {
      rec.client_train_loss.at(c.client_id) = c.stats.mean_train_loss;
      loss_sum += c.stats.mean_train_loss;
      released += c.stats.released_fraction;
      rec.any_exhausted = rec.any_exhausted || c.stats.gate_exhausted;
    }
    rec.train_loss_mean = loss_sum / static_cast<double>(contributions.size());
    rec.released_fraction = released / static_cast<double>(contributions.size());
    rec.eps_round = eps_round;
    rec.eps_cum = eps_round * static_cast<double>(state.round);
    const auto now = std::chrono::steady_clock::now();
    rec.wall_ms = std::chrono::duration<double, std::milli>(now - t_round).count();
    t_round = now;
    result.per_round.push_back(std::move(rec));
  };

  result.final_state = run_federation(cfg.transport, setup);
  result.final_eval = result.per_round.empty()
                          ? model.evaluate(result.final_state.w, eval_batch)
                          : result.per_round.back().global_eval;
  result.wall_ms_total = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t_start)
                             .count();

  if (!out_dir.empty()) write_run_outputs(result, out_dir);
  return result;
}

std::string metrics_to_csv(const RunResult& result) {
  std::ostringstream out;
  out << "round," << result.eval_metric
      << ",train_loss_mean,released_fraction,eps_round,eps_cum,exhausted";
  for (std::size_t c = 0; c < result.config.num_clients; ++c) {
    out << ",client" << c << "_loss";
  }
  out << "\n";
  for (const MetricsRecord& rec : result.per_round) {
    out << rec.round << "," << fmt_double(rec.global_eval) << ","
        << fmt_double(rec.train_loss_mean) << ","
        << fmt_double(rec.released_fraction) << "," << fmt_double(rec.eps_round)
        << "," << fmt_double(rec.eps_cum) << "," << (rec.any_exhausted ? 1 : 0);
    for (double loss : rec.client_train_loss) out << "," << fmt_double(loss);
    out << "\n";
  }
  return out.str();
}

void write_run_outputs(const RunResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(out_dir) / result.config.run_id;
  fs::create_directories(dir);

  {
    std::ofstream csv(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write metrics.csv under " + dir.string());
    csv << metrics_to_csv(result);
  }

  Checkpoint ckpt;
  ckpt.round = result.final_state.round;
  ckpt.config_hash = config_hash(result.config);
  ckpt.w = result.final_state.w;
  save_checkpoint(ckpt, (dir / "checkpoint.bin").string());

  nlohmann::ordered_json summary;
  summary["run_id"] = result.config.run_id;
  summary["eval_metric"] = result.eval_metric;
  summary["higher_is_better"] = result.eval_higher_is_better;
  summary["final_eval"] = result.final_eval;
  summary["rounds"] = result.config.rounds;
  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(config_hash(result.config)));
  summary["config_hash"] = hash_hex;
  nlohmann::ordered_json config_obj;
  {
    const std::string canon = canonical_config(result.config);
    for (const auto& [key, value] : parse_config_text(canon)) config_obj[key] = value;
  }
  summary["config"] = config_obj;
  summary["transport"] = to_string(result.config.transport);
  summary["wall_ms_total"] = result.wall_ms_total;
  nlohmann::ordered_json walls = nlohmann::ordered_json::array();
  std::size_t exhausted_rounds = 0;
  for (const MetricsRecord& rec : result.per_round) {
    walls.push_back(rec.wall_ms);
    if (rec.any_exhausted) ++exhausted_rounds;
  }
  summary["per_round_wall_ms"] = walls;
  summary["svt_exhausted_rounds"] = exhausted_rounds;
  std::ofstream js(dir / "summary.json", std::ios::binary | std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write summary.json under " + dir.string());
  js << summary.dump(2) << "\n";
}

namespace {

struct LoadedCsv {
  std::string name;
  std::string metric;
  std::vector<std::uint64_t> rounds;
  std::vector<double> eval;
};

LoadedCsv load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("compare: cannot open " + path);
  LoadedCsv out;
  namespace fs = std::filesystem;
  const fs::path p(path);
  out.name = p.filename() == "metrics.csv" && p.has_parent_path()
                 ? p.parent_path().filename().string()
                 : p.stem().string();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("compare: empty file " + path);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(trim(col));
  }
  std::size_t eval_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("eval_", 0) == 0) {
      eval_col = i;
      out.metric = header[i];
      break;
    }
  }
  if (eval_col == header.size() || header.empty() || header[0] != "round") {
    throw std::runtime_error("compare: " + path + " is not a metrics csv");
  }
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() <= eval_col) {
      throw std::runtime_error("compare: short row in " + path);
    }
    out.rounds.push_back(parse_u64("round", cells[0]));
    out.eval.push_back(parse_double("eval", cells[eval_col]));
  }
  return out;
}

}  // namespace

ComparisonResult compare_runs(const std::vector<std::string>& csv_paths) {
  if (csv_paths.size() < 2) {
    throw std::invalid_argument("compare: need at least two metrics files");
  }
  std::vector<LoadedCsv> runs;
  runs.reserve(csv_paths.size());
  for (const auto& path : csv_paths) runs.push_back(load_metrics_csv(path));
  ComparisonResult cmp;
  cmp.eval_metric = runs[0].metric;
  std::size_t common = runs[0].rounds.size();
  for (const LoadedCsv& run : runs) {
    if (run.metric != cmp.eval_metric) {
      throw std::invalid_argument("compare: mismatched metrics " + cmp.eval_metric +
                                  " vs " + run.metric + " (" + run.name + ")");
    }
    common = std::min(common, run.rounds.size());
    if (run.rounds.size() != runs[0].rounds.size()) cmp.truncated = true;
  }
  if (common == 0) throw std::invalid_argument("compare: a run has no rounds");
  cmp.rounds.assign(runs[0].rounds.begin(), runs[0].rounds.begin() + common);
  for (const LoadedCsv& run : runs) {
    cmp.run_names.push_back(run.name);
    cmp.eval_rows.emplace_back(run.eval.begin(), run.eval.begin() + common);
    cmp.finals.push_back(run.eval[common - 1]);
  }
  for (double f : cmp.finals) cmp.deltas_vs_first.push_back(f - cmp.finals[0]);
  return cmp;
}

std::string comparison_table(const ComparisonResult& cmp) {
  std::ostringstream out;
  out << "round";
  for (const auto& name : cmp.run_names) out << "\t" << name;
  out << "\n";
  for (std::size_t r = 0; r < cmp.rounds.size(); ++r) {
    out << cmp.rounds[r];
    for (const auto& row : cmp.eval_rows) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", row[r]);
      out << "\t" << buf;
    }
    out << "\n";
  }
  out << "final(" << cmp.eval_metric << ")";
  for (double f : cmp.finals) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", f);
    out << "\t" << buf;
  }
  out << "\ndelta_vs_first";
  for (double d : cmp.deltas_vs_first) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.6f", d);
    out << "\t" << buf;
  }
  out << "\n";
  if (cmp.truncated) out << "note: runs had different lengths; aligned on common prefix\n";
  return out.str();
}

}  // namespace fedsim
