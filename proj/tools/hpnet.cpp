// hpnet command-line tool: corpus generation, training, inference,
// evaluation, streaming rollouts and SVG plots.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage / bad config,
// 3 file-system or I/O failure, 4 invalid input data, 5 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hpnet/checkpoint.hpp"
#include "hpnet/config.hpp"
#include "hpnet/errors.hpp"
#include "hpnet/metrics.hpp"
#include "hpnet/model.hpp"
#include "hpnet/scene.hpp"
#include "hpnet/synth.hpp"
#include "hpnet/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hpnet;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kInvalid = 4, kNumeric = 5 };

const std::vector<std::string> kSplits = {"train", "val", "test", "stream"};

// ---- run config ------------------------------------------------------------

KeyValues profile_defaults(const std::string& profile) {
  ModelConfig m;
  TrainConfig t;
  KeyValues kv;
  int train = 2048, val = 256, test = 256, stream = 64;
  if (profile == "toy") {
    m = ModelConfig::toy();
    t = TrainConfig::toy();
    train = 512, val = 64, test = 64, stream = 32;
  } else if (profile == "micro") {
    m = ModelConfig::micro();
    t = TrainConfig::toy();
    t.epochs = 2;
    t.batch_size = 2;
    t.learning_rate = 1e-3;
    train = 8, val = 4, test = 4, stream = 4;
  } else if (profile != "paper") {
    throw UsageError("unknown profile '" + profile + "' (micro, toy, paper)");
  }
  kv = m.to_kv();
  for (const auto& [k, v] : t.to_kv()) kv[k] = v;
  kv.erase("train.seed");
  kv["profile"] = profile;
  kv["seed"] = "0";
  kv["data.train"] = std::to_string(train);
  kv["data.val"] = std::to_string(val);
  kv["data.test"] = std::to_string(test);
  kv["data.stream"] = std::to_string(stream);
  kv["data.layout"] = "cycle";
  kv["data.maneuver"] = "mixed";
  kv["data.min_agents"] = "2";
  kv["data.max_agents"] = "6";
  kv["data.position_noise"] = "0.02";
  kv["data.heading_noise"] = "0.005";
  kv["eval.objective"] = "marginal";
  kv["rollout.steps"] = "10";
  return kv;
}

struct RunConfig {
  KeyValues kv;
  std::set<std::string> explicit_keys;  // set by file or flag

  const std::string& at(const std::string& k) const {
    const auto it = kv.find(k);
    if (it == kv.end()) throw UsageError("missing config key '" + k + "'");
    return it->second;
  }
  long integer(const std::string& k) const {
    try {
      std::size_t pos = 0;
      const long v = std::stol(at(k), &pos);
      if (pos == at(k).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + k + "' needs an integer, got '" + at(k) + "'");
  }
  double real(const std::string& k) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(at(k), &pos);
      if (pos == at(k).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + k + "' needs a number, got '" + at(k) + "'");
  }
  std::uint64_t seed() const {
    const long s = integer("seed");
    if (s < 0) throw UsageError("seed must be non-negative");
    return static_cast<std::uint64_t>(s);
  }
  ModelConfig model() const {
    ModelConfig m = ModelConfig::from_kv(kv);
    m.validate();
    return m;
  }
  TrainConfig train() const {
    KeyValues t = kv;
    t["train.seed"] = at("seed");
    TrainConfig c = TrainConfig::from_kv(t);
    c.validate();
    return c;
  }
  void set_model(const ModelConfig& m) {
    for (const auto& [k, v] : m.to_kv()) kv[k] = v;
  }
  void set_train(const TrainConfig& t) {
    for (const auto& [k, v] : t.to_kv())
      if (k != "train.seed") kv[k] = v;
    kv["seed"] = std::to_string(t.seed);
  }
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("failed writing " + p.string());
}

fs::path data_root() {
  const char* env = std::getenv("HPNET_DATA_ROOT");
  return env && *env ? fs::path(env) : fs::path("hpnet-data");
}

// Options every subcommand understands.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  KeyValues flag_kv;  // command-specific flags that map onto config keys
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key=value config file");
  app->add_option("--seed", c.seed, "global seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--set", c.sets, "override one config key (key=value), repeatable");
}

// default < profile < file < flags
RunConfig resolve(const Common& c, const std::string& command) {
  KeyValues file;
  if (!c.config_path.empty()) file = parse_key_values(read_text(c.config_path));
  KeyValues flags = c.flag_kv;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    flags[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (c.seed) flags["seed"] = std::to_string(*c.seed);

  std::string profile = "toy";
  if (file.count("profile")) profile = file.at("profile");
  if (flags.count("profile")) profile = flags.at("profile");
  RunConfig rc;
  rc.kv = profile_defaults(profile);
  for (const auto* layer : {&file, &flags})
    for (const auto& [k, v] : *layer) {
      if (!rc.kv.count(k)) throw UsageError("unknown config key '" + k + "'");
      rc.kv[k] = v;
      rc.explicit_keys.insert(k);
    }
  rc.kv["command"] = command;
  return rc;
}

fs::path output_dir(const Common& c, const std::string& fallback) {
  const fs::path out = c.out.empty() ? data_root() / fallback : fs::path(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
  return out;
}

void write_run_config(const fs::path& dir, const RunConfig& rc) {
  write_text(dir / "run_config.txt", "# hpnet run config\n" + format_key_values(rc.kv));
}

// ---- corpus ----------------------------------------------------------------

struct LoadedScene {
  std::string path;  // as listed in the manifest or given on the command line
  Scene scene;
};

std::vector<LoadedScene> load_split(const fs::path& corpus, const std::string& split) {
  const fs::path manifest = corpus / "manifest.txt";
  if (!fs::exists(manifest)) throw IoError("no corpus manifest at " + manifest.string());
  std::vector<LoadedScene> out;
  for (const auto& e : read_manifest(manifest)) {
    if (e.split != split) continue;
    Scene s = read_scene(corpus / e.path);
    s.validate();
    out.push_back({e.path, std::move(s)});
  }
  return out;
}

std::vector<Scene> scenes_of(const std::vector<LoadedScene>& v) {
  std::vector<Scene> out;
  for (const auto& s : v) out.push_back(s.scene);
  return out;
}

void require_frames(const Scene& s, const std::string& what, int T, int F) {
  if (s.history_frames != T || s.future_frames != F)
    throw ValidityError(what + " has T=" + std::to_string(s.history_frames) + " F=" + std::to_string(s.future_frames) +
                        " but the model expects T=" + std::to_string(T) + " F=" + std::to_string(F));
}

ScenarioSpec scenario_for(const RunConfig& rc, const std::string& split, int index) {
  const int steps = static_cast<int>(rc.integer("rollout.steps"));
  if (steps < 1) throw UsageError("rollout.steps must be at least 1");
  ScenarioSpec spec = corpus_scenario(rc.seed(), split, index, split == "stream" ? steps - 1 : 0);
  spec.history_frames = static_cast<int>(rc.integer("model.history_frames"));
  spec.future_frames = static_cast<int>(rc.integer("model.future_frames"));
  if (rc.at("data.layout") != "cycle") spec.layout = parse_layout(rc.at("data.layout"));
  if (rc.at("data.maneuver") != "mixed") {
    const Maneuver m = parse_maneuver(rc.at("data.maneuver"));
    spec.mix = ManeuverMix{0, 0, 0, 0, 0};
    switch (m) {
      case Maneuver::kKeepLane: spec.mix.keep_lane = 1; break;
      case Maneuver::kTurnLeft: spec.mix.turn_left = 1; break;
      case Maneuver::kTurnRight: spec.mix.turn_right = 1; break;
      case Maneuver::kStopAndGo: spec.mix.stop_and_go = 1; break;
      case Maneuver::kSuddenTurn: spec.mix.sudden_turn = 1; break;
    }
    spec.focal_maneuver = m;
  }
  spec.min_agents = static_cast<int>(rc.integer("data.min_agents"));
  spec.max_agents = static_cast<int>(rc.integer("data.max_agents"));
  spec.position_noise = rc.real("data.position_noise");
  spec.heading_noise = rc.real("data.heading_noise");
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw UsageError(e.what());
  }
  return spec;
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  std::vector<std::string> splits;
  std::optional<int> count;
};

int cmd_generate(const Common& c, const GenerateArgs& a) {
  RunConfig rc = resolve(c, "generate");
  for (const auto& s : a.splits)
    if (std::find(kSplits.begin(), kSplits.end(), s) == kSplits.end()) throw UsageError("unknown split '" + s + "'");
  for (const auto& s : kSplits) {
    const bool selected = a.splits.empty() || std::find(a.splits.begin(), a.splits.end(), s) != a.splits.end();
    if (!selected) rc.kv["data." + s] = "0";
    else if (a.count) rc.kv["data." + s] = std::to_string(*a.count);
  }
  const fs::path out = output_dir(c, "corpus");
  rc.kv["path.out"] = out.string();

  std::vector<ManifestEntry> entries;
  for (const auto& split : kSplits) {
    const long count = rc.integer("data." + split);
    if (count < 0) throw UsageError("data." + split + " must be non-negative");
    if (count > 0) fs::create_directories(out / split);
    for (int i = 0; i < count; ++i) {
      const ScenarioSpec spec = scenario_for(rc, split, i);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.json", i);
      const std::string rel = split + "/" + name;
      write_scene(out / rel, generate(spec));
      entries.push_back({split, rel, spec.seed});
    }
  }
  write_manifest(out / "manifest.txt", entries);
  // everything written must parse back
  for (const auto& e : entries) read_scene(out / e.path).validate();
  write_run_config(out, rc);
  std::cout << "wrote " << entries.size() << " scenes to " << out.string() << "\n";
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string resume;
  bool ablate_hpa = false;
};

void save_atomic(const fs::path& p, const Checkpoint& ck) {
  const fs::path tmp = p.string() + ".tmp";
  save_checkpoint(tmp, ck);
  fs::rename(tmp, p);
}

int cmd_train(Common c, const TrainArgs& a) {
  if (a.ablate_hpa) c.flag_kv["model.use_hpa"] = "false";
  RunConfig rc = resolve(c, "train");
  const fs::path corpus = a.corpus.empty() ? data_root() / "corpus" : fs::path(a.corpus);

  ModelConfig mc;
  TrainConfig tc;
  std::optional<TrainRun> run;
  if (!a.resume.empty()) {
    run.emplace(restore_run(load_checkpoint(a.resume), &tc));
    mc = run->model.config();
    if (a.ablate_hpa && mc.use_hpa) throw UsageError("--ablate-hpa does not match the resumed checkpoint");
    if (rc.explicit_keys.count("train.epochs")) tc.epochs = static_cast<int>(rc.integer("train.epochs"));
    tc.validate();
  } else {
    mc = rc.model();
    tc = rc.train();
    run.emplace(init_run(mc, tc));
  }
  rc.set_model(mc);
  rc.set_train(tc);

  const auto train_set = load_split(corpus, "train");
  if (train_set.empty()) throw ValidityError("corpus " + corpus.string() + " has no training scenes");
  const auto val_set = load_split(corpus, "val");
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set) require_frames(s.scene, s.path, mc.history_frames, mc.future_frames);

  const fs::path out = output_dir(c, "train");
  rc.kv["path.corpus"] = corpus.string();
  rc.kv["path.out"] = out.string();
  if (!a.resume.empty()) rc.kv["path.resume"] = a.resume;
  write_run_config(out, rc);

  std::ofstream log(out / "train.log", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + (out / "train.log").string());
  const fs::path ckpt = out / "checkpoint.ckpt";
  train(
      *run, scenes_of(train_set), scenes_of(val_set), tc,
      [&](const std::string& line) {
        log << line << '\n';
        log.flush();
        if (line.starts_with("epoch=")) std::cout << line << '\n';
      },
      [&](const TrainRun& r) {
        const Checkpoint ck = make_checkpoint(r, tc);
        char name[48];
        std::snprintf(name, sizeof(name), "checkpoint_epoch%03d.ckpt", r.epochs_done);
        save_atomic(out / name, ck);
        save_atomic(ckpt, ck);
      });
  save_atomic(ckpt, make_checkpoint(*run, tc));

  std::size_t params = 0;
  for (const auto& [name, t] : run->model.params().items()) params += t.size();
  write_text(out / "model_card.txt", model_card(mc, {{"checkpoint", "checkpoint.ckpt"},
                                                     {"parameters", std::to_string(params)},
                                                     {"state.epochs_done", std::to_string(run->epochs_done)},
                                                     {"state.steps_done", std::to_string(run->steps_done)},
                                                     {"train.objective", to_string(tc.objective)},
                                                     {"train.seed", std::to_string(tc.seed)}}));
  std::cout << "checkpoint " << ckpt.string() << "\n";
  return kOk;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::vector<std::string> scenes;
  std::string corpus;
  std::string split = "test";
  bool all_steps = false;
};

json bundle_records(const TrajectoryBundle& b, const SceneGraph& g, const Scene& scene, bool all_steps) {
  json records = json::array();
  for (int t = all_steps ? 0 : b.T - 1; t < b.T; ++t)
    for (int n = 0; n < b.N; ++n) {
      const auto a = static_cast<std::size_t>(g.agent_row(t, n));
      for (int k = 0; k < b.K; ++k) {
        json r;
        r["t"] = t - (b.T - 1);
        r["agent"] = n;
        r["id"] = scene.agents[static_cast<std::size_t>(n)].id;
        r["mode"] = k;
        r["valid"] = g.valid[a] != 0;
        if (g.valid[a]) {
          r["score"] = b.scores[a * static_cast<std::size_t>(b.K) + static_cast<std::size_t>(k)];
          json traj = json::array();
          const std::size_t off = b.offset(t, n, k);
          for (int f = 0; f < b.F; ++f) {
            const Vec2 p = to_global(g.poses[a], {b.finals[off + 2 * static_cast<std::size_t>(f)],
                                                  b.finals[off + 2 * static_cast<std::size_t>(f) + 1]});
            traj.push_back({p.x, p.y});
          }
          r["trajectory"] = std::move(traj);
        } else {
          r["score"] = nullptr;
          r["trajectory"] = nullptr;
        }
        records.push_back(std::move(r));
      }
    }
  return records;
}

int cmd_predict(const Common& c, const PredictArgs& a) {
  RunConfig rc = resolve(c, "predict");
  if (a.checkpoint.empty()) throw UsageError("predict needs --checkpoint");
  if (a.scenes.empty() == a.corpus.empty()) throw UsageError("predict needs either --scene or --corpus");
  const HpnetModel model = load_model(load_checkpoint(a.checkpoint));
  const ModelConfig& mc = model.config();
  rc.set_model(mc);

  std::vector<LoadedScene> inputs;
  if (!a.corpus.empty()) {
    inputs = load_split(a.corpus, a.split);
    if (inputs.empty()) throw ValidityError("corpus split '" + a.split + "' is empty");
  } else {
    for (const auto& p : a.scenes) {
      Scene s = read_scene(p);
      s.validate();
      inputs.push_back({p, std::move(s)});
    }
  }

  json doc;
  doc["format"] = "hpnet-predictions";
  doc["version"] = 1;
  doc["T"] = mc.history_frames;
  doc["F"] = mc.future_frames;
  doc["K"] = mc.modes;
  doc["all_steps"] = a.all_steps;
  doc["scenes"] = json::array();
  for (const auto& in : inputs) {
    require_frames(in.scene, in.path, mc.history_frames, mc.future_frames);
    const SceneGraph g = build_scene_graph(in.scene, mc);
    const TrajectoryBundle b = model.predict(g);
    doc["scenes"].push_back({{"path", in.path}, {"records", bundle_records(b, g, in.scene, a.all_steps)}});
  }

  const fs::path out = output_dir(c, "predict");
  rc.kv["path.checkpoint"] = a.checkpoint;
  rc.kv["path.out"] = out.string();
  rc.kv["predict.all_steps"] = a.all_steps ? "true" : "false";
  if (!a.corpus.empty()) {
    rc.kv["path.corpus"] = a.corpus;
    rc.kv["predict.split"] = a.split;
  } else {
    for (std::size_t i = 0; i < a.scenes.size(); ++i) rc.kv["path.scene." + std::to_string(i)] = a.scenes[i];
  }
  write_text(out / "predictions.json", doc.dump(1) + "\n");
  write_run_config(out, rc);
  std::cout << "wrote predictions for " << inputs.size() << " scenes to " << (out / "predictions.json").string()
            << "\n";
  return kOk;
}

json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidityError(p.string() + ": " + e.what());
  }
}

// t = 0 records of one scene entry of a predictions file.
Prediction prediction_from_records(const json& records, std::size_t agents) {
  Prediction p;
  p.trajectories.resize(agents);
  p.probabilities.resize(agents);
  p.valid.assign(agents, 0);
  try {
    for (const auto& r : records) {
      if (r.at("t").get<int>() != 0 || !r.at("valid").get<bool>()) continue;
      const auto n = r.at("agent").get<std::size_t>();
      if (n >= agents) throw ValidityError("prediction record for agent " + std::to_string(n) + " out of range");
      Trajectory traj;
      for (const auto& xy : r.at("trajectory")) traj.push_back({xy.at(0).get<double>(), xy.at(1).get<double>()});
      p.valid[n] = 1;
      p.trajectories[n].push_back(std::move(traj));
      p.probabilities[n].push_back(r.at("score").get<double>());
    }
  } catch (const json::exception& e) {
    throw ValidityError(std::string("malformed prediction record: ") + e.what());
  }
  return p;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string predictions;
  std::string predictor;
  std::string checkpoint;
  std::string corpus;
  std::string split = "test";
  std::string objective;
};

void print_summary(const std::string& label, const EvalRow& r, Objective obj) {
  std::cout << label;
  if (obj == Objective::kJoint)
    std::cout << " min_joint_ade=" << format_double(r.min_joint_ade) << " min_joint_fde="
              << format_double(r.min_joint_fde) << " windows=" << r.joint_count;
  else
    std::cout << " min_ade=" << format_double(r.min_ade) << " min_fde=" << format_double(r.min_fde)
              << " miss_rate=" << format_double(r.miss_rate) << " b_min_fde=" << format_double(r.b_min_fde)
              << " samples=" << r.count;
  if (r.stability_count) std::cout << " stability=" << format_double(r.stability);
  std::cout << "\n";
}

int cmd_evaluate(Common c, const EvaluateArgs& a) {
  if (!a.objective.empty()) c.flag_kv["eval.objective"] = a.objective;
  RunConfig rc = resolve(c, "evaluate");
  const Objective obj = [&] {
    try {
      return parse_objective(rc.at("eval.objective"));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }();
  const int sources = !a.predictions.empty() + !a.predictor.empty() + !a.checkpoint.empty();
  if (sources != 1) throw UsageError("evaluate needs exactly one of --predictions, --predictor, --checkpoint");
  if (!a.predictor.empty() && a.predictor != "cv") throw UsageError("unknown predictor '" + a.predictor + "' (cv)");
  const fs::path corpus = a.corpus.empty() ? data_root() / "corpus" : fs::path(a.corpus);

  EvalReport report;
  if (!a.predictions.empty()) {
    const json doc = read_json(a.predictions);
    if (!doc.is_object() || doc.value("format", "") != "hpnet-predictions")
      throw ValidityError(a.predictions + " is not a predictions file");
    const json& scenes = doc.at("scenes");
    if (scenes.empty()) throw ValidityError("prediction set " + a.predictions + " is empty");
    int idx = 0;
    for (const auto& entry : scenes) {
      const std::string path = entry.at("path").get<std::string>();
      const fs::path resolved = fs::path(path).is_absolute() || a.corpus.empty() ? fs::path(path) : corpus / path;
      Scene s = read_scene(resolved);
      s.validate();
      evaluate_window(report, idx++, 0, prediction_from_records(entry.at("records"), s.agents.size()), s);
    }
    rc.kv["path.predictions"] = a.predictions;
  } else {
    const auto scenes = load_split(corpus, a.split);
    if (scenes.empty()) throw ValidityError("corpus split '" + a.split + "' is empty");
    std::optional<HpnetModel> model;
    if (!a.checkpoint.empty()) {
      model.emplace(load_model(load_checkpoint(a.checkpoint)));
      rc.kv["path.checkpoint"] = a.checkpoint;
    } else {
      rc.kv["eval.predictor"] = a.predictor;
    }
    int idx = 0;
    for (const auto& s : scenes) {
      if (model) require_frames(s.scene, s.path, model->config().history_frames, model->config().future_frames);
      const Predictor p = model ? model_predictor(*model) : cv_predictor(s.scene.future_frames);
      evaluate_window(report, idx++, 0, p(s.scene), s.scene);
    }
    rc.kv["path.corpus"] = corpus.string();
    rc.kv["eval.split"] = a.split;
  }
  if (report.agents.empty()) throw ValidityError("nothing to score: no agent has a prediction and a full future");

  const fs::path out = output_dir(c, "eval");
  rc.kv["path.out"] = out.string();
  write_text(out / "eval.json", report.to_json());
  write_text(out / "eval.csv", report.to_csv());
  write_run_config(out, rc);
  print_summary("eval", report.aggregate(), obj);
  return kOk;
}

// ---- rollout ---------------------------------------------------------------

struct RolloutArgs {
  std::vector<std::string> checkpoints;
  std::string predictor;
  std::vector<std::string> labels;
  std::string corpus;
  std::string split = "stream";
  std::optional<int> steps;
};

std::string csv_cell(std::size_t count, double v) { return count ? format_double(v) : std::string(); }

int cmd_rollout(Common c, const RolloutArgs& a) {
  if (a.steps) c.flag_kv["rollout.steps"] = std::to_string(*a.steps);
  RunConfig rc = resolve(c, "rollout");
  const int steps = static_cast<int>(rc.integer("rollout.steps"));
  if (steps < 1) throw UsageError("rollout.steps must be at least 1");
  if (!a.predictor.empty() && a.predictor != "cv") throw UsageError("unknown predictor '" + a.predictor + "' (cv)");
  if (a.checkpoints.empty() && a.predictor.empty()) throw UsageError("rollout needs --checkpoint and/or --predictor");

  std::vector<HpnetModel> models;
  for (const auto& p : a.checkpoints) models.push_back(load_model(load_checkpoint(p)));
  int T = static_cast<int>(rc.integer("model.history_frames"));
  int F = static_cast<int>(rc.integer("model.future_frames"));
  if (!models.empty()) {
    T = models[0].config().history_frames;
    F = models[0].config().future_frames;
    for (const auto& m : models)
      if (m.config().history_frames != T || m.config().future_frames != F)
        throw UsageError("rollout checkpoints disagree on T/F");
  }

  std::vector<std::pair<std::string, Predictor>> predictors;
  for (std::size_t i = 0; i < models.size(); ++i) predictors.emplace_back("model" + std::to_string(i + 1), model_predictor(models[i]));
  if (!a.predictor.empty()) predictors.emplace_back("cv", cv_predictor(F));
  if (!a.labels.empty()) {
    if (a.labels.size() != predictors.size())
      throw UsageError("--labels needs " + std::to_string(predictors.size()) + " names");
    for (std::size_t i = 0; i < predictors.size(); ++i) predictors[i].first = a.labels[i];
  }
  std::set<std::string> seen;
  for (const auto& [label, p] : predictors) {
    if (label.empty() || label.find_first_of(",./\\ ") != std::string::npos)
      throw UsageError("label '" + label + "' must be a plain name");
    if (!seen.insert(label).second) throw UsageError("duplicate label '" + label + "'");
  }

  const fs::path corpus = a.corpus.empty() ? data_root() / "corpus" : fs::path(a.corpus);
  const auto streams = load_split(corpus, a.split);
  if (streams.empty()) throw ValidityError("corpus split '" + a.split + "' is empty");

  std::vector<EvalReport> reports(predictors.size());
  for (std::size_t i = 0; i < predictors.size(); ++i)
    for (std::size_t s = 0; s < streams.size(); ++s)
      rollout_eval(reports[i], predictors[i].second, streams[s].scene, static_cast<int>(s), steps, T, F);

  const fs::path out = output_dir(c, "rollout");
  std::ostringstream paired;
  paired << "step";
  for (const auto& [label, p] : predictors)
    for (const char* m : {"min_ade", "min_fde", "b_min_fde", "stability"}) paired << ',' << label << '.' << m;
  paired << '\n';
  std::vector<std::vector<EvalRow>> rows;
  for (const auto& r : reports) rows.push_back(r.per_step());
  for (int step = 0; step < steps; ++step) {
    paired << step;
    for (const auto& per : rows) {
      const auto it = std::find_if(per.begin(), per.end(), [&](const EvalRow& r) { return r.step == step; });
      if (it == per.end()) {
        paired << ",,,,";
        continue;
      }
      paired << ',' << csv_cell(it->count, it->min_ade) << ',' << csv_cell(it->count, it->min_fde) << ','
             << csv_cell(it->count, it->b_min_fde) << ',' << csv_cell(it->stability_count, it->stability);
    }
    paired << '\n';
  }
  for (std::size_t i = 0; i < predictors.size(); ++i) {
    write_text(out / ("rollout_" + predictors[i].first + ".csv"), reports[i].to_csv());
    write_text(out / ("rollout_" + predictors[i].first + ".json"), reports[i].to_json());
    print_summary(predictors[i].first, reports[i].aggregate(), Objective::kMarginal);
  }
  write_text(out / "rollout_paired.csv", paired.str());
  rc.kv["path.corpus"] = corpus.string();
  rc.kv["path.out"] = out.string();
  rc.kv["rollout.split"] = a.split;
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) rc.kv["path.checkpoint." + std::to_string(i)] = a.checkpoints[i];
  for (std::size_t i = 0; i < predictors.size(); ++i) rc.kv["rollout.label." + std::to_string(i)] = predictors[i].first;
  write_run_config(out, rc);
  return kOk;
}

// ---- plot ------------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> reports;
  std::string scene;
  std::string predictions;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

const std::vector<std::string> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string svg_header(double w, double h) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '&') out += "&amp;";
    else if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '"') out += "&quot;";
    else out += ch;
  }
  return out;
}

std::string curve_svg(const std::string& metric, const std::vector<Series>& series) {
  const double W = 640, H = 420, L = 70, R = 150, Tm = 40, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  y1 += 0.05 * (y1 - y0);
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - Tm - B); };

  std::ostringstream s;
  s << svg_header(W, H);
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << xml_escape(metric) << " per rollout step</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt2(py(yv) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt2(yv) << "</text>\n";
  }
  for (double xv = x0; xv <= x1 + 1e-9; xv += std::max(1.0, std::floor((x1 - x0) / 10)))
    s << "<text x=\"" << fmt2(px(xv)) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xv << "</text>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& color = kPalette[i % kPalette.size()];
    s << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < series[i].points.size(); ++j)
      s << (j ? " " : "") << fmt2(px(series[i].points[j].first)) << ',' << fmt2(py(series[i].points[j].second));
    s << "\"/>\n";
    for (const auto& [x, y] : series[i].points)
      s << "<circle cx=\"" << fmt2(px(x)) << "\" cy=\"" << fmt2(py(y)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = Tm + 20 + 18 * static_cast<double>(i);
    s << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << xml_escape(series[i].label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Curves from rollout/eval CSVs: one file per metric, one line per run.
std::vector<fs::path> plot_reports(const std::vector<std::string>& files, const fs::path& out) {
  static const std::set<std::string> metrics = {"min_ade", "min_fde", "b_min_fde", "miss_rate",
                                                "min_joint_ade", "min_joint_fde", "stability"};
  std::map<std::string, std::vector<Series>> by_metric;
  for (const auto& file : files) {
    std::istringstream in(read_text(file));
    std::string line;
    if (!std::getline(in, line)) throw ValidityError(file + " is empty");
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "step") throw ValidityError(file + " has no step column");
    std::vector<Series> cols(header.size());
    std::vector<std::string> metric(header.size());
    for (std::size_t i = 1; i < header.size(); ++i) {
      const auto dot = header[i].rfind('.');
      metric[i] = dot == std::string::npos ? header[i] : header[i].substr(dot + 1);
      cols[i].label = dot == std::string::npos ? fs::path(file).stem().string() : header[i].substr(0, dot);
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      double step = 0.0;
      try {
        step = std::stod(cells.at(0));
        for (std::size_t i = 1; i < header.size() && i < cells.size(); ++i)
          if (metrics.count(metric[i]) && !cells[i].empty()) cols[i].points.emplace_back(step, std::stod(cells[i]));
      } catch (const std::exception&) {
        throw ValidityError(file + ": malformed row '" + line + "'");
      }
    }
    for (std::size_t i = 1; i < header.size(); ++i)
      if (metrics.count(metric[i]) && !cols[i].points.empty()) by_metric[metric[i]].push_back(std::move(cols[i]));
  }
  std::vector<fs::path> written;
  for (const auto& [metric, series] : by_metric) {
    const fs::path p = out / ("curves_" + metric + ".svg");
    write_text(p, curve_svg(metric, series));
    written.push_back(p);
  }
  return written;
}

// Scene overlay: lanes grey, observed history green, ground-truth future red,
// focal-agent predictions blue.
fs::path plot_scene(const std::string& scene_path, const std::string& predictions_path, const fs::path& out) {
  const Scene scene = read_scene(scene_path);
  scene.validate();
  std::vector<Trajectory> preds;
  if (!predictions_path.empty()) {
    const json doc = read_json(predictions_path);
    const json* entry = nullptr;
    for (const auto& e : doc.at("scenes")) {
      const std::string p = e.at("path").get<std::string>();
      if (doc.at("scenes").size() == 1 || p == scene_path ||
          (fs::path(scene_path).filename() == fs::path(p).filename() &&
           fs::path(scene_path).parent_path().filename() == fs::path(p).parent_path().filename()))
        entry = &e;
    }
    if (!entry) throw ValidityError(predictions_path + " has no predictions for " + scene_path);
    preds = prediction_from_records(entry->at("records"), scene.agents.size()).trajectories.at(0);
  }

  const int T = scene.history_frames;
  std::vector<std::vector<Vec2>> lanes, history, future;
  for (const auto& l : scene.lanes) lanes.push_back(l.centerline);
  for (const auto& a : scene.agents) {
    history.emplace_back();
    future.emplace_back();
    for (int i = 0; i < scene.total_frames(); ++i) {
      const auto& st = a.states[static_cast<std::size_t>(i)];
      if (!st.valid) continue;
      (i < T ? history.back() : future.back()).push_back(st.position());
    }
    if (!history.back().empty() && !future.back().empty()) future.back().insert(future.back().begin(), history.back().back());
  }
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto grow = [&](const std::vector<std::vector<Vec2>>& lines) {
    for (const auto& line : lines)
      for (const auto& p : line) x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  };
  grow(lanes), grow(history), grow(future), grow(preds);
  if (x1 < x0) x0 = y0 = -1, x1 = y1 = 1;
  const double span = std::max({x1 - x0, y1 - y0, 1.0}), size = 720, pad = 40;
  const double scale = (size - 2 * pad) / span;
  auto px = [&](Vec2 p) { return fmt2(pad + (p.x - x0) * scale) + "," + fmt2(size - pad - (p.y - y0) * scale); };
  auto polyline = [&](const std::vector<Vec2>& line, const char* cls, const char* color, double width) {
    if (line.size() < 2) return std::string();
    std::string s = std::string("<polyline class=\"") + cls + "\" fill=\"none\" stroke=\"" + color +
                    "\" stroke-width=\"" + fmt2(width) + "\" points=\"";
    for (std::size_t i = 0; i < line.size(); ++i) s += (i ? " " : "") + px(line[i]);
    return s + "\"/>\n";
  };

  std::ostringstream s;
  s << svg_header(size, size);
  for (const auto& l : lanes) s << polyline(l, "lane", "#9e9e9e", 1.5);
  for (const auto& h : history) s << polyline(h, "history", "#2e7d32", 2.5);
  for (const auto& f : future) s << polyline(f, "ground-truth", "#c62828", 2.5);
  for (const auto& p : preds) {
    std::vector<Vec2> line = p;
    if (!history[0].empty()) line.insert(line.begin(), history[0].back());
    s << polyline(line, "prediction", "#1565c0", 2.0);
  }
  s << "</svg>\n";
  const fs::path p = out / ("scene_" + fs::path(scene_path).stem().string() + ".svg");
  write_text(p, s.str());
  return p;
}

int cmd_plot(const Common& c, const PlotArgs& a) {
  RunConfig rc = resolve(c, "plot");
  if (a.reports.empty() && a.scene.empty()) throw UsageError("plot needs --report and/or --scene");
  if (!a.predictions.empty() && a.scene.empty()) throw UsageError("--predictions needs --scene");
  for (const auto& r : a.reports)
    if (!fs::exists(r)) throw IoError("no such report " + r);
  const fs::path out = output_dir(c, "plots");
  std::vector<fs::path> written = plot_reports(a.reports, out);
  if (!a.scene.empty()) written.push_back(plot_scene(a.scene, a.predictions, out));
  for (std::size_t i = 0; i < a.reports.size(); ++i) rc.kv["path.report." + std::to_string(i)] = a.reports[i];
  if (!a.scene.empty()) rc.kv["path.scene"] = a.scene;
  if (!a.predictions.empty()) rc.kv["path.predictions"] = a.predictions;
  rc.kv["path.out"] = out.string();
  write_run_config(out, rc);
  for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const SpecError*>(&e)) return kUsage;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const ValidityError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const MaskingError*>(&e))
    return kInvalid;
  return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hpnet: multi-agent trajectory forecasting on synthetic driving scenes"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 unexpected failure, 2 usage/config, 3 I/O, 4 invalid data, 5 numeric failure.\n"
             "HPNET_DATA_ROOT sets the default data directory (default ./hpnet-data).");

  Common common;
  GenerateArgs gen;
  TrainArgs tr;
  PredictArgs pr;
  EvaluateArgs ev;
  RolloutArgs ro;
  PlotArgs pl;

  auto* g = app.add_subcommand("generate", "write a synthetic corpus and its manifest");
  add_common(g, common);
  g->add_option("--split", gen.splits, "only these splits (train, val, test, stream)");
  g->add_option("--count", gen.count, "scenes per selected split");

  auto* t = app.add_subcommand("train", "train a model on a corpus");
  add_common(t, common);
  t->add_option("--corpus", tr.corpus, "corpus directory");
  t->add_option("--resume", tr.resume, "continue from a checkpoint");
  t->add_flag("--ablate-hpa", tr.ablate_hpa, "train the twin without historical prediction attention");

  auto* p = app.add_subcommand("predict", "write forecasts for scenes");
  add_common(p, common);
  p->add_option("--checkpoint", pr.checkpoint, "trained checkpoint")->required();
  p->add_option("--scene", pr.scenes, "scene file, repeatable");
  p->add_option("--corpus", pr.corpus, "corpus directory");
  p->add_option("--split", pr.split, "corpus split");
  p->add_flag("--all-steps", pr.all_steps, "emit every observed frame, not only the last");

  auto* e = app.add_subcommand("evaluate", "score forecasts against ground truth");
  add_common(e, common);
  e->add_option("--predictions", ev.predictions, "predictions file from predict");
  e->add_option("--predictor", ev.predictor, "built-in predictor (cv)");
  e->add_option("--checkpoint", ev.checkpoint, "run a checkpoint on the corpus");
  e->add_option("--corpus", ev.corpus, "corpus directory");
  e->add_option("--split", ev.split, "corpus split");
  e->add_option("--objective", ev.objective, "marginal or joint");

  auto* r = app.add_subcommand("rollout", "streaming evaluation with per-step accuracy and stability");
  add_common(r, common);
  r->add_option("--checkpoint", ro.checkpoints, "checkpoint, repeatable");
  r->add_option("--predictor", ro.predictor, "built-in predictor (cv)");
  r->add_option("--labels", ro.labels, "names for the predictors, in order")->delimiter(',');
  r->add_option("--corpus", ro.corpus, "corpus directory");
  r->add_option("--split", ro.split, "corpus split");
  r->add_option("--steps", ro.steps, "rollout steps");

  auto* v = app.add_subcommand("plot", "render SVG curves and scene overlays");
  add_common(v, common);
  v->add_option("--report", pl.reports, "rollout or eval CSV, repeatable");
  v->add_option("--scene", pl.scene, "scene file to draw");
  v->add_option("--predictions", pl.predictions, "predictions to overlay on the scene");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(common, gen);
    if (t->parsed()) return cmd_train(common, tr);
    if (p->parsed()) return cmd_predict(common, pr);
    if (e->parsed()) return cmd_evaluate(common, ev);
    if (r->parsed()) return cmd_rollout(common, ro);
    if (v->parsed()) return cmd_plot(common, pl);
  } catch (const std::exception& ex) {
    std::cerr << "hpnet: " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return kFailure;
}
