#include "avasd/harness.hpp"

#include "avasd/checkpoint.hpp"
#include "avasd/metrics.hpp"
#include "avasd/parallel.hpp"
#include "avasd/report.hpp"
#include "avasd/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace avasd {
namespace fs = std::filesystem;

namespace {

using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t,
                                       std::uint64_t, float>;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("missing input " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void require(const fs::path& path, const char* produced_by) {
  if (!fs::exists(path)) {
    throw MissingInput("missing input " + path.string() + " (run '" + produced_by + "' first)");
  }
}

// run.jobs and run.out describe how a run was launched, not what it computes.
std::string identity(ExperimentConfig c) {
  c.jobs = 1;
  c.out.clear();
  return dump_config(c);
}

RunPaths prepare(ExperimentConfig& config) {
  config.resolve();
  RunPaths paths{run_directory(config)};
  if (fs::exists(paths.config())) {
    const auto previous = load_config(paths.config());
    if (identity(previous) != identity(config)) {
      throw ConfigError(paths.root.string() +
                        " already holds a different experiment (see its config.resolved)");
    }
  }
  config.out = paths.root.string();
  fs::create_directories(paths.root);
  write_text(paths.config(), dump_config(config));
  return paths;
}

std::string curve_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,loss,ce,avil_skipped\n";
  for (const auto& e : curve) {
    out += std::to_string(e.epoch) + ',' + format_number(e.loss) + ',' + format_number(e.ce) +
           ',' + std::to_string(e.avil_skipped) + '\n';
  }
  return out;
}

CheckpointMeta meta_of(const TrainConfig& t) {
  CheckpointMeta m;
  m.seed = t.seed;
  m.loss_mode = std::string(to_string(t.mode));
  m.lambda = t.avil;
  m.avil_source = t.avil_source;
  return m;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

// Test samples the attacks run on, with their positions in test.jsonl.
struct EvalSet {
  std::vector<std::size_t> indices;
  std::vector<AVSample> samples;
};

EvalSet evaluation_set(const ExperimentConfig& config, const ModelParams<float>& model,
                       const Dataset& test) {
  EvalSet set;
  if (!config.eval.correct_only) {
    set.samples = test.samples;
    for (std::size_t i = 0; i < test.samples.size(); ++i) set.indices.push_back(i);
    return set;
  }
  std::vector<Checkpoint> others;
  for (const auto& p : config.eval.filter_models) {
    require(p, "train");
    others.push_back(load_checkpoint(p));
  }
  std::vector<const ModelParams<float>*> models{&model};
  for (const auto& c : others) models.push_back(&c.params);
  set.indices = correctly_predicted(models, test.samples, config.jobs);
  set.samples = select(test.samples, set.indices);
  if (set.samples.empty()) {
    throw MetricError("no test sample is predicted correctly by every filter model");
  }
  return set;
}

}  // namespace

fs::path run_directory(const ExperimentConfig& config) {
  if (!config.out.empty()) return config.out;
  if (const char* root = std::getenv("AVASD_OUT_ROOT"); root && *root) {
    return fs::path(root) / config.model.name;
  }
  return fs::path("runs") / config.model.name;
}

void cmd_gen(ExperimentConfig config) {
  const auto paths = prepare(config);
  fs::create_directories(paths.train_data().parent_path());
  save_dataset(generate_dataset(config.train_generator()), paths.train_data());
  save_dataset(generate_dataset(config.test_generator()), paths.test_data());
}

void cmd_train(ExperimentConfig config) {
  const auto paths = prepare(config);
  require(paths.train_data(), "gen");
  const Dataset train_set = load_dataset(paths.train_data());

  TrainConfig tc = config.model.train;
  std::optional<Checkpoint> source;
  if (uses_adversarial(tc.mode) && tc.refresh == AdversarialRefresh::kStatic) {
    require(config.model.adversarial_source, "train");
    source = load_checkpoint(config.model.adversarial_source);
    tc.adversarial_source = &source->params;
  }
  auto init = make_model(train_set.samples, config.dims(), tc.seed, config.model.cross_attention);
  const auto result = train(std::move(init), train_set.samples, tc);
  save_checkpoint(paths.checkpoint(), result.params, meta_of(tc));
  write_text(paths.loss_curve(), curve_csv(result.curve));

  if (config.substitute.enabled) {
    // The attacker's own model: plain cross-entropy, its own seed and architecture.
    TrainConfig sc = config.model.train;
    sc.mode = LossMode::kCeOnly;
    sc.avil = {};
    sc.seed = *config.substitute.seed;
    auto sub_init =
        make_model(train_set.samples, config.dims(), sc.seed, config.substitute.cross_attention);
    const auto sub = train(std::move(sub_init), train_set.samples, sc);
    save_checkpoint(paths.substitute(), sub.params, meta_of(sc));
    write_text(paths.substitute_curve(), curve_csv(sub.curve));
  }
}

void cmd_attack(ExperimentConfig config) {
  const auto paths = prepare(config);
  require(paths.checkpoint(), "train");
  require(paths.test_data(), "gen");
  const auto ck = load_checkpoint(paths.checkpoint());
  const Dataset test = load_dataset(paths.test_data());
  const auto set = evaluation_set(config, ck.params, test);
  const std::size_t n =
      std::min(set.samples.size(), static_cast<std::size_t>(config.attack.archive_samples));

  const auto cells = config.cells();
  parallel_for(cells.size(), config.jobs, [&](std::size_t c) {
    const AttackConfig& cell = cells[c];
    std::string lines;
    for (std::size_t i = 0; i < n; ++i) {
      const AVSample& s = set.samples[i];
      AttackConfig cfg = cell;
      cfg.seed = derive_seed(cell.seed, i);
      const auto pair = run_attack(ck.params, s.audio, s.video, s.labels, cfg);
      FloatJson rec;
      rec["index"] = set.indices[i];
      rec["frames"] = s.labels.size();
      rec["final_loss"] = pair.final_loss;
      rec["objective_trace"] = pair.objective_trace;
      rec["candidate_losses"] = pair.candidate_losses;
      auto rows = [](const ad::Matrix<float>& m) {
        FloatJson out = FloatJson::array();
        for (ad::Index r = 0; r < m.rows(); ++r) {
          out.push_back(std::vector<float>(m.row(r).data(), m.row(r).data() + m.cols()));
        }
        return out;
      };
      rec["delta_audio"] = rows(pair.delta_a);
      rec["delta_video"] = rows(pair.delta_v);
      lines += rec.dump() + '\n';
    }
    FloatJson header;
    header["attack"] = cell.fingerprint();
    header["model"] = hex(params_hash(ck.params));
    header["samples"] = n;
    write_text(paths.attacks() / (cell_name(cell) + ".jsonl"), header.dump() + '\n' + lines);
  });
}

void cmd_eval(ExperimentConfig config) {
  const auto paths = prepare(config);
  require(paths.checkpoint(), "train");
  require(paths.test_data(), "gen");
  const auto ck = load_checkpoint(paths.checkpoint());
  const Dataset test = load_dataset(paths.test_data());
  std::optional<Checkpoint> substitute;
  if (config.attack.transfer) {
    require(paths.substitute(), "train");
    substitute = load_checkpoint(paths.substitute());
  }
  const auto set = evaluation_set(config, ck.params, test);

  struct Task {
    AttackConfig attack;
    bool transfer = false;
  };
  std::vector<Task> tasks;
  for (const auto& cell : config.cells()) {
    for (int rep = 0; rep < config.attack.seeds; ++rep) {
      Task t{cell, false};
      t.attack.seed = cell.seed + static_cast<std::uint64_t>(rep);
      tasks.push_back(t);
      if (config.attack.transfer) {
        t.transfer = true;
        tasks.push_back(t);
      }
    }
  }

  const EvalReport clean = evaluate(ck.params, set.samples, std::nullopt, {config.jobs, nullptr});
  std::vector<EvalReport> reports(tasks.size());
  parallel_for(tasks.size(), config.jobs, [&](std::size_t i) {
    EvalOptions options;
    options.jobs = 1;
    if (tasks[i].transfer) options.crafting_model = &substitute->params;
    reports[i] = evaluate(ck.params, set.samples, tasks[i].attack, options);
  });

  const std::string loss_mode = ck.meta.loss_mode;
  std::vector<EvalRow> rows;
  rows.push_back({config.model.name, loss_mode, "none", "-", "-", 0.0, clean.map, std::nullopt,
                  std::nullopt, 0});
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& a = tasks[i].attack;
    std::string method(to_string(a.method));
    if (tasks[i].transfer) method += "-transfer";
    rows.push_back({config.model.name, loss_mode, method, std::string(to_string(a.scenario)),
                    std::string(to_string(a.modality)), a.eps_av, reports[i].map,
                    reports[i].ecr_a, reports[i].ecr_v, a.seed});
  }

  nlohmann::json doc;
  doc["config"] = dump_config(config);
  doc["model_hash"] = hex(params_hash(ck.params));
  doc["test_data_hash"] = hex(dataset_hash(test));
  doc["evaluated_indices"] = set.indices;
  doc["clean"] = {{"map", clean.map}, {"frames", clean.frames}, {"fingerprint", clean.fingerprint}};
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& r = rows[i + 1];
    nlohmann::json cell{{"attack_method", r.attack_method},
                        {"scenario", r.scenario},
                        {"modality", r.modality},
                        {"eps_av", r.eps_av},
                        {"seed", r.seed},
                        {"map", r.map},
                        {"ecr_a", *r.ecr_a},
                        {"ecr_v", *r.ecr_v},
                        {"frames", reports[i].frames},
                        {"ecr_rows_skipped", reports[i].ecr_rows_skipped},
                        {"fingerprint", reports[i].fingerprint}};
    cells.push_back(std::move(cell));
  }
  doc["cells"] = std::move(cells);
  write_text(paths.eval_json(), doc.dump(2) + '\n');
  write_text(paths.eval_csv(), eval_csv(rows));
}

void cmd_report(std::span<const fs::path> runs, const fs::path& out) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<EvalRow> rows;
  std::string sources;
  for (const auto& run : runs) {
    const RunPaths paths{run};
    require(paths.eval_csv(), "eval");
    auto part = parse_eval_csv(read_text(paths.eval_csv()), paths.eval_csv().string());
    rows.insert(rows.end(), part.begin(), part.end());
    sources += "- `" + run.string() + "` (config: `" + paths.config().string() + "`)\n";
  }
  const auto agg = aggregate(rows);
  std::string md = "# Evaluation report\n\nRuns:\n\n" + sources +
                   "\nmAP is averaged over attack seeds; sd is the sample standard deviation.\n\n" +
                   markdown_report(agg) + "\n![mAP vs eps_av](map_vs_eps.svg)\n";
  write_text(out / "report.md", md);
  write_text(out / "map_vs_eps.svg", svg_plot(agg));
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const MissingInput*>(&e)) return kExitMissingInput;
  if (dynamic_cast<const TrainingDiverged*>(&e)) return kExitDiverged;
  if (dynamic_cast<const DataFormatError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
      dynamic_cast<const ReportError*>(&e)) {
    return kExitBadInput;
  }
  return kExitInternal;
}

std::string error_record(const std::exception& e) {
  const int code = exit_code_for(e);
  const char* kind = "internal";
  switch (code) {
    case kExitUsage: kind = "config"; break;
    case kExitMissingInput: kind = "missing-input"; break;
    case kExitDiverged: kind = "diverged"; break;
    case kExitBadInput: kind = "bad-input"; break;
    default: break;
  }
  return nlohmann::json{{"error", kind}, {"exit_code", code}, {"message", e.what()}}.dump();
}

}  // namespace avasd
