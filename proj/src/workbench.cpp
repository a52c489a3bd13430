#include "airlab/workbench.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace airlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

void RunConfig::validate() const {
  DecoderConfig mc = model;
  mc.mechanism = mechanism;
  mc.validate();
  attack.validate();
  if (epochs < 1 || epochs_stage2 < 1 || epochs_dpo < 1) {
    throw std::invalid_argument("run config: epochs must be >= 1");
  }
  if (lr_stage1 <= 0 || lr_stage2 <= 0 || lr_dpo <= 0) {
    throw std::invalid_argument("run config: lr must be > 0");
  }
  if (batch < 1 || grad_accum < 1) {
    throw std::invalid_argument("run config: batch and grad_accum must be >= 1");
  }
  if (beta <= 0) throw std::invalid_argument("run config: beta must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("run config: weight_decay must be >= 0");
  if (clip_norm <= 0) throw std::invalid_argument("run config: clip_norm must be > 0");
  if (out_dir.empty()) throw std::invalid_argument("run config: empty out_dir");
  if (n_train < 4) throw std::invalid_argument("run config: n_train must be >= 4");
  if (n_heldout < 1 || n_sep < 1 || n_attack < 1) {
    throw std::invalid_argument("run config: dataset sizes must be >= 1");
  }
  if (with_input_fraction < 0.0 || with_input_fraction > 1.0) {
    throw std::invalid_argument("run config: with_input_fraction must be in [0,1]");
  }
  if (eval_adversarial_instruction.empty() || eval_marker.empty()) {
    throw std::invalid_argument("run config: eval injection and marker must be non-empty");
  }
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["mechanism"] = mechanism_name(cfg.mechanism);
  j["stage"] = train_stage_name(cfg.stage);
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["model"] = {{"layers", cfg.model.layers},
                {"width", cfg.model.width},
                {"heads", cfg.model.heads},
                {"max_seq", cfg.model.max_seq},
                {"ih_init_std", cfg.model.ih_init_std}};
  j["train"] = {{"epochs", cfg.epochs},
                {"epochs_stage2", cfg.epochs_stage2},
                {"epochs_dpo", cfg.epochs_dpo},
                {"lr_stage1", cfg.lr_stage1},
                {"lr_stage2", cfg.lr_stage2},
                {"lr_dpo", cfg.lr_dpo},
                {"batch", cfg.batch},
                {"grad_accum", cfg.grad_accum},
                {"beta", cfg.beta},
                {"weight_decay", cfg.weight_decay},
                {"clip_norm", cfg.clip_norm}};
  j["attack"] = {{"prefix_len", cfg.attack.prefix_len},
                 {"steps", cfg.attack.steps},
                 {"momentum", cfg.attack.momentum},
                 {"topk_per_position", cfg.attack.topk_per_position},
                 {"candidates_per_step", cfg.attack.candidates_per_step},
                 {"target", cfg.attack.target},
                 {"adversarial_instruction", cfg.attack.adversarial_instruction},
                 {"seed", cfg.attack.seed}};
  j["data"] = {{"dir", cfg.data_dir},
               {"n_train", cfg.n_train},
               {"n_heldout", cfg.n_heldout},
               {"n_sep", cfg.n_sep},
               {"n_attack", cfg.n_attack},
               {"with_input_fraction", cfg.with_input_fraction}};
  j["eval"] = {{"adversarial_instruction", cfg.eval_adversarial_instruction},
               {"marker", cfg.eval_marker}};
  return j.dump();
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text, bool apply_env) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("run config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("run config: top level must be an object");

  RunConfig cfg;
  if (j.contains("mechanism")) cfg.mechanism = mechanism_from_name(j.at("mechanism"));
  if (j.contains("stage")) cfg.stage = train_stage_from_name(j.at("stage"));
  read_field(j, "seed", cfg.seed);
  read_field(j, "out_dir", cfg.out_dir);
  if (j.contains("model")) {
    const json& m = j.at("model");
    read_field(m, "layers", cfg.model.layers);
    read_field(m, "width", cfg.model.width);
    read_field(m, "heads", cfg.model.heads);
    read_field(m, "max_seq", cfg.model.max_seq);
    read_field(m, "ih_init_std", cfg.model.ih_init_std);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    read_field(t, "epochs", cfg.epochs);
    read_field(t, "epochs_stage2", cfg.epochs_stage2);
    read_field(t, "epochs_dpo", cfg.epochs_dpo);
    read_field(t, "lr_stage1", cfg.lr_stage1);
    read_field(t, "lr_stage2", cfg.lr_stage2);
    read_field(t, "lr_dpo", cfg.lr_dpo);
    read_field(t, "batch", cfg.batch);
    read_field(t, "grad_accum", cfg.grad_accum);
    read_field(t, "beta", cfg.beta);
    read_field(t, "weight_decay", cfg.weight_decay);
    read_field(t, "clip_norm", cfg.clip_norm);
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    read_field(a, "prefix_len", cfg.attack.prefix_len);
    read_field(a, "steps", cfg.attack.steps);
    read_field(a, "momentum", cfg.attack.momentum);
    read_field(a, "topk_per_position", cfg.attack.topk_per_position);
    read_field(a, "candidates_per_step", cfg.attack.candidates_per_step);
    read_field(a, "target", cfg.attack.target);
    read_field(a, "adversarial_instruction", cfg.attack.adversarial_instruction);
    read_field(a, "seed", cfg.attack.seed);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    read_field(d, "dir", cfg.data_dir);
    read_field(d, "n_train", cfg.n_train);
    read_field(d, "n_heldout", cfg.n_heldout);
    read_field(d, "n_sep", cfg.n_sep);
    read_field(d, "n_attack", cfg.n_attack);
    read_field(d, "with_input_fraction", cfg.with_input_fraction);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    read_field(e, "adversarial_instruction", cfg.eval_adversarial_instruction);
    read_field(e, "marker", cfg.eval_marker);
  }
  if (apply_env) apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

RunConfig run_config_from_file(const std::string& path, bool apply_env) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("run config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(buf.str(), apply_env);
}

namespace {

long long env_int(const char* name, const char* value) {
  try {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != std::string(value).size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("env ") + name + ": '" + value +
                                "' is not an integer");
  }
}

double env_double(const char* name, const char* value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != std::string(value).size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("env ") + name + ": '" + value + "' is not a number");
  }
}

}  // namespace

void apply_env_overrides(RunConfig& cfg) {
  const auto override_int = [](const char* name, auto& field) {
    if (const char* v = std::getenv(name)) {
      field = static_cast<std::decay_t<decltype(field)>>(env_int(name, v));
    }
  };
  const auto override_double = [](const char* name, double& field) {
    if (const char* v = std::getenv(name)) field = env_double(name, v);
  };
  const auto override_string = [](const char* name, std::string& field) {
    if (const char* v = std::getenv(name)) field = v;
  };

  if (const char* v = std::getenv("AIRLAB_MECHANISM")) cfg.mechanism = mechanism_from_name(v);
  if (const char* v = std::getenv("AIRLAB_STAGE")) cfg.stage = train_stage_from_name(v);
  override_int("AIRLAB_SEED", cfg.seed);
  override_string("AIRLAB_OUT_DIR", cfg.out_dir);

  override_int("AIRLAB_MODEL_LAYERS", cfg.model.layers);
  override_int("AIRLAB_MODEL_WIDTH", cfg.model.width);
  override_int("AIRLAB_MODEL_HEADS", cfg.model.heads);
  override_int("AIRLAB_MODEL_MAX_SEQ", cfg.model.max_seq);
  override_double("AIRLAB_MODEL_IH_INIT_STD", cfg.model.ih_init_std);

  override_int("AIRLAB_TRAIN_EPOCHS", cfg.epochs);
  override_int("AIRLAB_TRAIN_EPOCHS_STAGE2", cfg.epochs_stage2);
  override_int("AIRLAB_TRAIN_EPOCHS_DPO", cfg.epochs_dpo);
  override_double("AIRLAB_TRAIN_LR_STAGE1", cfg.lr_stage1);
  override_double("AIRLAB_TRAIN_LR_STAGE2", cfg.lr_stage2);
  override_double("AIRLAB_TRAIN_LR_DPO", cfg.lr_dpo);
  override_int("AIRLAB_TRAIN_BATCH", cfg.batch);
  override_int("AIRLAB_TRAIN_GRAD_ACCUM", cfg.grad_accum);
  override_double("AIRLAB_TRAIN_BETA", cfg.beta);
  override_double("AIRLAB_TRAIN_WEIGHT_DECAY", cfg.weight_decay);
  override_double("AIRLAB_TRAIN_CLIP_NORM", cfg.clip_norm);

  override_int("AIRLAB_ATTACK_PREFIX_LEN", cfg.attack.prefix_len);
  override_int("AIRLAB_ATTACK_STEPS", cfg.attack.steps);
  override_double("AIRLAB_ATTACK_MOMENTUM", cfg.attack.momentum);
  override_int("AIRLAB_ATTACK_TOPK", cfg.attack.topk_per_position);
  override_int("AIRLAB_ATTACK_CANDIDATES", cfg.attack.candidates_per_step);
  override_string("AIRLAB_ATTACK_TARGET", cfg.attack.target);
  override_string("AIRLAB_ATTACK_ADV_INSTRUCTION", cfg.attack.adversarial_instruction);
  override_int("AIRLAB_ATTACK_SEED", cfg.attack.seed);

  override_string("AIRLAB_DATA_DIR", cfg.data_dir);
  override_int("AIRLAB_DATA_N_TRAIN", cfg.n_train);
  override_int("AIRLAB_DATA_N_HELDOUT", cfg.n_heldout);
  override_int("AIRLAB_DATA_N_SEP", cfg.n_sep);
  override_int("AIRLAB_DATA_N_ATTACK", cfg.n_attack);
  override_double("AIRLAB_DATA_WITH_INPUT_FRACTION", cfg.with_input_fraction);

  override_string("AIRLAB_EVAL_ADV_INSTRUCTION", cfg.eval_adversarial_instruction);
  override_string("AIRLAB_EVAL_MARKER", cfg.eval_marker);
}

RunPaths resolve_paths(const RunConfig& cfg) {
  RunPaths p;
  p.data_dir = cfg.data_dir.empty()
                   ? cfg.out_dir + "/data/seed" + std::to_string(cfg.seed)
                   : cfg.data_dir;
  p.train_set = p.data_dir + "/train.jsonl";
  p.heldout_set = p.data_dir + "/heldout.jsonl";
  p.adversarial_set = p.data_dir + "/adversarial.jsonl";
  p.preference_set = p.data_dir + "/preference.jsonl";
  p.attack_set = p.data_dir + "/attack.jsonl";
  p.sep_set = p.data_dir + "/sep.jsonl";
  p.run_dir = cfg.out_dir + "/" + mechanism_name(cfg.mechanism) + "/" +
              train_stage_name(cfg.stage) + "/" + std::to_string(cfg.seed);
  p.checkpoint = p.run_dir + "/checkpoint.bin";
  p.train_trace = p.run_dir + "/trace.csv";
  p.traces_dir = p.run_dir + "/traces";
  p.reports_dir = p.run_dir + "/reports";
  return p;
}

namespace {

// CSV artifacts carry the run config as a leading comment line.
void write_csv_artifact(const std::string& path, const std::string& config_json,
                        const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("workbench: cannot open '" + path + "' for writing");
  out << "# " << config_json << "\n" << body;
  if (!out) throw std::runtime_error("workbench: write failed for '" + path + "'");
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("workbench: cannot open '" + path + "' for writing");
  out << body;
  if (!out) throw std::runtime_error("workbench: write failed for '" + path + "'");
}

std::string stage1_checkpoint_path(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.stage = TrainStage::Stage1SFT;
  return resolve_paths(c).checkpoint;
}

// Attack targets must make the marker check meaningful. Echo hosts are out:
// repeating the corrupted data faithfully reproduces the marker no matter
// how well a model separates instructions from data. Examples whose own
// payload or answer contains the marker are out: they would register hits
// with no injection present. Last-word hosts stay; handing the injected
// payload back as the answer is exactly the leak the defense trains away.
bool unusable_attack_target(const InstructionExample& ex, const std::string& marker) {
  if (ex.instruction.rfind("echo", 0) == 0) return true;
  if (ex.input && ex.input->find(marker) != std::string::npos) return true;
  return ex.output.find(marker) != std::string::npos;
}

void require_artifact(const std::string& path, const char* produced_by) {
  if (!fs::exists(path)) {
    throw MissingArtifactError("missing '" + path + "' (run " + produced_by + " first)");
  }
}

}  // namespace

Workbench::Workbench(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  paths_ = resolve_paths(cfg_);
  cfg_json_ = run_config_to_json(cfg_);
}

void Workbench::gen_data() {
  fs::create_directories(paths_.data_dir);

  const auto train_set = synth_task_dataset(cfg_.seed, cfg_.n_train, cfg_.with_input_fraction);
  save_dataset(paths_.train_set, train_set, cfg_json_);

  const auto heldout =
      synth_task_dataset(Rng::mix(cfg_.seed, 1), cfg_.n_heldout, cfg_.with_input_fraction);
  save_dataset(paths_.heldout_set, heldout, cfg_json_);

  Rng adv_rng = Rng(cfg_.seed).fork(2);
  save_adversarial_dataset(paths_.adversarial_set, build_adversarial_sft(train_set, adv_rng),
                           cfg_json_);

  Rng dpo_rng = Rng(cfg_.seed).fork(3);
  save_preference_dataset(paths_.preference_set, build_dpo(train_set, dpo_rng), cfg_json_);

  std::vector<InstructionExample> attack_set;
  for (int pool = 8 * cfg_.n_attack; static_cast<int>(attack_set.size()) < cfg_.n_attack;
       pool *= 2) {
    attack_set.clear();
    for (const auto& ex : synth_task_dataset(Rng::mix(cfg_.seed, 4), pool, 1.0)) {
      if (!unusable_attack_target(ex, cfg_.eval_marker)) attack_set.push_back(ex);
      if (static_cast<int>(attack_set.size()) == cfg_.n_attack) break;
    }
  }
  save_dataset(paths_.attack_set, attack_set, cfg_json_);

  save_sep_set(paths_.sep_set, synth_sep_set(Rng::mix(cfg_.seed, 5), cfg_.n_sep), cfg_json_);
}

TrainTrace Workbench::train() {
  fs::create_directories(paths_.run_dir);

  TrainConfig tc;
  tc.stage = cfg_.stage;
  switch (cfg_.stage) {
    case TrainStage::Stage1SFT:
      tc.epochs = cfg_.epochs;
      tc.lr = cfg_.lr_stage1;
      break;
    case TrainStage::Stage2SFT:
      tc.epochs = cfg_.epochs_stage2;
      tc.lr = cfg_.lr_stage2;
      break;
    case TrainStage::Stage2DPO:
      tc.epochs = cfg_.epochs_dpo;
      tc.lr = cfg_.lr_dpo;
      break;
  }
  tc.batch = cfg_.batch;
  tc.grad_accum = cfg_.grad_accum;
  tc.beta = cfg_.beta;
  tc.weight_decay = cfg_.weight_decay;
  tc.clip_norm = cfg_.clip_norm;
  tc.seed = cfg_.seed;

  TrainData data;
  DecoderModel model;
  DecoderModel reference;
  const DecoderModel* reference_ptr = nullptr;

  if (cfg_.stage == TrainStage::Stage1SFT) {
    DecoderConfig mc = cfg_.model;
    mc.mechanism = cfg_.mechanism;
    Rng rng(Rng::mix(cfg_.seed, 0x1711));
    model = init_decoder<float>(mc, rng);
    require_artifact(paths_.train_set, "gen-data");
    data.sft = load_dataset(paths_.train_set);
  } else {
    const std::string stage1 = stage1_checkpoint_path(cfg_);
    require_artifact(stage1, "the stage1_sft training");
    model = load_checkpoint<float>(stage1);
    if (cfg_.stage == TrainStage::Stage2SFT) {
      require_artifact(paths_.adversarial_set, "gen-data");
      data.adversarial = load_adversarial_dataset(paths_.adversarial_set);
    } else {
      reference = load_checkpoint<float>(stage1);
      reference_ptr = &reference;
      require_artifact(paths_.preference_set, "gen-data");
      data.preference = load_preference_dataset(paths_.preference_set);
    }
  }

  const TrainTrace trace = train_pipeline(model, reference_ptr, data, tc);
  save_checkpoint(model, paths_.checkpoint, cfg_json_);
  write_csv_artifact(paths_.train_trace, cfg_json_, trace_to_csv(trace));
  return trace;
}

DecoderModel Workbench::load_run_checkpoint() const {
  require_artifact(paths_.checkpoint, "the train command");
  return load_checkpoint<float>(paths_.checkpoint);
}

EvalReport Workbench::base_report() const {
  EvalReport report;
  report.model_id = std::string(mechanism_name(cfg_.mechanism)) + "-" +
                    train_stage_name(cfg_.stage) + "-s" + std::to_string(cfg_.seed);
  report.mechanism = mechanism_name(cfg_.mechanism);
  report.stage = train_stage_name(cfg_.stage);
  report.seed = cfg_.seed;
  return report;
}

void Workbench::write_report_file(const std::string& path, const EvalReport& report) const {
  fs::create_directories(paths_.reports_dir);
  write_text(path, report_to_json(report, cfg_json_) + "\n");
}

AttackCommandResult Workbench::attack() {
  const DecoderModel model = load_run_checkpoint();
  require_artifact(paths_.attack_set, "gen-data");
  const auto examples = load_dataset(paths_.attack_set);
  fs::create_directories(paths_.traces_dir);
  fs::create_directories(paths_.reports_dir);

  const std::string seed_tag = "s" + std::to_string(cfg_.attack.seed);
  AttackCommandResult result;
  result.examples = static_cast<int>(examples.size());
  json per_example = json::array();
  double loss_sum = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    AttackConfig acfg = cfg_.attack;
    acfg.seed = Rng::mix(cfg_.attack.seed, static_cast<uint64_t>(i));
    const AttackTrace trace = run_attack(model, examples[i], acfg);

    char name[64];
    std::snprintf(name, sizeof(name), "attack_%s_%03zu.csv", seed_tag.c_str(), i);
    const std::string trace_path = paths_.traces_dir + "/" + name;
    write_csv_artifact(trace_path, cfg_json_, attack_trace_to_csv(trace));

    json entry = json::parse(attack_summary_json(trace));
    entry["index"] = static_cast<int>(i);
    entry["trace_csv"] = trace_path;
    per_example.push_back(std::move(entry));

    result.successes += trace.success ? 1 : 0;
    loss_sum += trace.steps.back().best_loss;
  }
  result.mean_final_loss = loss_sum / static_cast<double>(examples.size());

  json summary;
  summary["run_config"] = json::parse(cfg_json_);
  summary["attack_seed"] = cfg_.attack.seed;
  summary["examples"] = per_example;
  summary["successes"] = result.successes;
  summary["asr"] = static_cast<double>(result.successes) / static_cast<double>(result.examples);
  summary["mean_final_loss"] = result.mean_final_loss;
  result.summary_path = paths_.reports_dir + "/attack_summary_" + seed_tag + ".json";
  write_text(result.summary_path, summary.dump(2) + "\n");
  return result;
}

EvalReport Workbench::eval_static() {
  const DecoderModel model = load_run_checkpoint();
  require_artifact(paths_.attack_set, "gen-data");
  const auto examples = load_dataset(paths_.attack_set);
  EvalReport report = base_report();
  for (StaticAttackKind kind : {StaticAttackKind::Naive, StaticAttackKind::Ignore,
                                StaticAttackKind::Completion, StaticAttackKind::EscapeSeparation}) {
    report.metrics[std::string("asr_") + static_attack_kind_name(kind)] =
        asr_static(model, examples, kind, cfg_.eval_adversarial_instruction, cfg_.eval_marker);
  }
  write_report_file(paths_.reports_dir + "/eval_static.json", report);
  return report;
}

EvalReport Workbench::eval_gcg() {
  std::vector<fs::path> summaries;
  if (fs::exists(paths_.reports_dir)) {
    for (const auto& entry : fs::directory_iterator(paths_.reports_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("attack_summary_", 0) == 0 && entry.path().extension() == ".json") {
        summaries.push_back(entry.path());
      }
    }
  }
  if (summaries.empty()) {
    throw MissingArtifactError("eval-gcg: no attack summaries under '" + paths_.reports_dir +
                               "' (run the attack command first)");
  }
  std::sort(summaries.begin(), summaries.end());

  int successes = 0, total = 0;
  for (const auto& path : summaries) {
    std::ifstream in(path);
    json j;
    in >> j;
    if (!in) throw std::runtime_error("eval-gcg: cannot read '" + path.string() + "'");
    successes += j.at("successes").get<int>();
    total += static_cast<int>(j.at("examples").size());
  }
  EvalReport report = base_report();
  report.metrics["asr_gcg"] = static_cast<double>(successes) / static_cast<double>(total);
  write_report_file(paths_.reports_dir + "/eval_gcg.json", report);
  return report;
}

EvalReport Workbench::eval_sep() {
  const DecoderModel model = load_run_checkpoint();
  require_artifact(paths_.sep_set, "gen-data");
  require_artifact(paths_.heldout_set, "gen-data");
  const auto sep_set = load_sep_set(paths_.sep_set);
  Rng rng(Rng::mix(cfg_.seed, 0x5e9c));
  const SepScores scores = sep_scores(model, sep_set, rng);

  EvalReport report = base_report();
  report.metrics["sep_u"] = scores.u;
  if (scores.s) report.metrics["sep_s"] = *scores.s;
  report.metrics["utility"] = utility_proxy(model, load_dataset(paths_.heldout_set));
  write_report_file(paths_.reports_dir + "/eval_sep.json", report);
  return report;
}

std::string Workbench::report() {
  if (!fs::exists(cfg_.out_dir)) {
    throw MissingArtifactError("report: no eval reports under '" + cfg_.out_dir + "'");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(cfg_.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name == "eval_static.json" || name == "eval_gcg.json" || name == "eval_sep.json") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) {
    throw MissingArtifactError("report: no eval reports under '" + cfg_.out_dir + "'");
  }
  std::sort(files.begin(), files.end());

  // One merged row set per model: reports for the same model contribute
  // disjoint metrics.
  std::map<std::string, EvalReport> merged;
  for (const auto& path : files) {
    std::ifstream in(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const EvalReport r = report_from_json(buf.str());
    auto [it, inserted] = merged.try_emplace(r.model_id, r);
    if (!inserted) {
      for (const auto& [name, value] : r.metrics) it->second.metrics[name] = value;
    }
  }
  std::vector<EvalReport> reports;
  reports.reserve(merged.size());
  for (auto& [id, r] : merged) reports.push_back(std::move(r));

  const std::string csv = reports_to_csv(reports);
  write_csv_artifact(cfg_.out_dir + "/report.csv", cfg_json_, csv);
  return csv;
}

}  // namespace airlab
