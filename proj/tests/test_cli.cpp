#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hpnet/scene.hpp"
#include "hpnet/synth.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "hpnet_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + work().string() + "' && " + env + " '" HPNET_CLI "' " + args + " >> cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(work() / p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(work() / dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), work() / dir).string()] = slurp(e.path());
  return out;
}

std::vector<double> totals(const std::string& log, int epoch) {
  std::vector<double> out;
  std::istringstream in(log);
  std::string line;
  const std::string tag = " epoch=" + std::to_string(epoch) + " ";
  while (std::getline(in, line))
    if (line.starts_with("step=") && line.find(tag) != std::string::npos)
      out.push_back(std::stod(line.substr(line.find("total=") + 6)));
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

const std::string kMicro = "--set profile=micro ";
const std::string kStraight =
    "--set data.layout=straight --set data.maneuver=keep-lane --set data.position_noise=0 --set data.heading_noise=0 ";

// shared fixtures, built on first use
const fs::path& micro_corpus() {
  static const fs::path p = [] {
    REQUIRE(run("generate " + kMicro + "--seed 1 --out micro_corpus") == 0);
    return fs::path("micro_corpus");
  }();
  return p;
}

const fs::path& micro_ckpt() {
  static const fs::path p = [] {
    micro_corpus();
    REQUIRE(run("train " + kMicro + "--seed 1 --corpus micro_corpus --out micro_run") == 0);
    return fs::path("micro_run/checkpoint.ckpt");
  }();
  return p;
}

const fs::path& toy_run() {
  static const fs::path p = [] {
    REQUIRE(run("generate --seed 2 --set data.train=32 --set data.val=0 --set data.test=3 --set data.stream=0 "
                "--out toy_corpus") == 0);
    REQUIRE(run("train --seed 2 --corpus toy_corpus --out toy_run") == 0);
    return fs::path("toy_run");
  }();
  return p;
}

}  // namespace

TEST_CASE("generate writes exactly the requested scenes") {
  REQUIRE(run("generate " + kMicro + "--split train --count 1 --out one") == 0);
  const auto files = tree("one");
  CHECK(files.size() == 3);
  CHECK(files.count("manifest.txt") == 1);
  CHECK(files.count("run_config.txt") == 1);
  CHECK(files.count("train/000000.json") == 1);
  const auto entries = hpnet::read_manifest(work() / "one/manifest.txt");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].path == "train/000000.json");
}

TEST_CASE("generate is deterministic per seed") {
  REQUIRE(run("generate " + kMicro + "--seed 9 --out det") == 0);
  const auto first = tree("det");
  REQUIRE(run("generate " + kMicro + "--seed 9 --out det") == 0);
  CHECK(first == tree("det"));
  REQUIRE(run("generate " + kMicro + "--seed 10 --out det") == 0);
  CHECK(first.at("train/000000.json") != tree("det").at("train/000000.json"));
}

TEST_CASE("default-size corpus re-parses") {
  REQUIRE(run("generate --seed 3 --out full") == 0);
  const auto entries = hpnet::read_manifest(work() / "full/manifest.txt");
  std::map<std::string, int> per_split;
  for (const auto& e : entries) {
    ++per_split[e.split];
    const hpnet::Scene s = hpnet::read_scene(work() / "full" / e.path);
    CHECK_NOTHROW(s.validate());
    CHECK(hpnet::scene_to_text(s) == slurp(fs::path("full") / e.path));
  }
  CHECK(per_split["train"] == 512);
  CHECK(per_split["val"] == 64);
  CHECK(per_split["test"] == 64);
  CHECK(per_split["stream"] == 32);
}

TEST_CASE("config precedence: flag over file over default") {
  {
    std::ofstream f(work() / "prec.cfg");
    f << "# precedence check\nprofile = micro\nseed = 3\ndata.train = 2\n";
  }
  REQUIRE(run("generate --config prec.cfg --seed 4 --set data.val=1 --out prec") == 0);
  const auto kv = hpnet::parse_key_values(slurp("prec/run_config.txt"));
  CHECK(kv.at("seed") == "4");
  CHECK(kv.at("data.train") == "2");
  CHECK(kv.at("data.val") == "1");
  CHECK(kv.at("data.test") == "4");
  CHECK(kv.at("profile") == "micro");
  CHECK(hpnet::read_manifest(work() / "prec/manifest.txt").size() == 2 + 1 + 4 + 4);
}

TEST_CASE("data root from the environment") {
  REQUIRE(run("generate " + kMicro + "--split val --count 1", "HPNET_DATA_ROOT=envroot") == 0);
  CHECK(fs::exists(work() / "envroot/corpus/manifest.txt"));
  CHECK(fs::exists(work() / "envroot/corpus/val/000000.json"));
}

TEST_CASE("exit codes") {
  micro_ckpt();
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("generate --set no.such.key=1 --out bad") == 2);
  CHECK(run("generate --set profile=huge --out bad") == 2);
  CHECK(run("generate --set data.train=two --out bad") == 2);
  CHECK(run("generate --config missing.cfg --out bad") == 3);
  CHECK(run("train " + kMicro + "--corpus no_corpus --out bad") == 3);
  CHECK(run("predict --checkpoint missing.ckpt --corpus micro_corpus --out bad") == 3);
  // micro checkpoint (T=4, F=3) on a default-size scene
  REQUIRE(run("generate --split test --count 1 --out toy_one") == 0);
  CHECK(run("predict --checkpoint micro_run/checkpoint.ckpt --scene toy_one/test/000000.json --out bad") == 4);
  {
    std::ofstream f(work() / "garbage.ckpt");
    f << "not a checkpoint";
  }
  CHECK(run("predict --checkpoint garbage.ckpt --corpus micro_corpus --out bad") != 0);
  CHECK(run("train " + kMicro + "--corpus micro_corpus --set train.learning_rate=1e300 --out diverge") == 5);
}

TEST_CASE("training smoke run on 32 toy scenes") {
  const auto log = slurp(toy_run() / "train.log");
  const auto first = totals(log, 1), last = totals(log, 8);
  REQUIRE(first.size() == 8);
  REQUIRE(last.size() == 8);
  MESSAGE("epoch 1 mean loss " << mean(first) << ", epoch 8 mean loss " << mean(last));
  CHECK(mean(last) < mean(first));
  CHECK(fs::exists(work() / toy_run() / "model_card.txt"));
  CHECK(fs::exists(work() / toy_run() / "run_config.txt"));
}

TEST_CASE("resume continues the log and matches an uninterrupted run") {
  micro_corpus();
  REQUIRE(run("train " + kMicro + "--seed 5 --corpus micro_corpus --out straight") == 0);
  REQUIRE(fs::exists(work() / "straight/checkpoint_epoch001.ckpt"));
  REQUIRE(run("train " + kMicro + "--resume straight/checkpoint_epoch001.ckpt --corpus micro_corpus --out resumed") ==
          0);
  const auto log = slurp("resumed/train.log");
  CHECK(log.starts_with("step=5 epoch=2 "));
  const auto full = slurp("straight/train.log");
  CHECK(full.ends_with(log));
  CHECK(slurp("resumed/checkpoint.ckpt") == slurp("straight/checkpoint.ckpt"));

  // extending a finished run appends to its log
  REQUIRE(run("train " + kMicro + "--set train.epochs=3 --resume straight/checkpoint.ckpt --corpus micro_corpus "
              "--out straight") == 0);
  const auto extended = slurp("straight/train.log");
  CHECK(extended.starts_with(full));
  CHECK(extended.find("epoch=3 steps=12") != std::string::npos);
}

TEST_CASE("--ablate-hpa changes only the HPA switch") {
  micro_ckpt();
  REQUIRE(run("train " + kMicro + "--seed 1 --ablate-hpa --corpus micro_corpus --out ablated") == 0);
  auto a = hpnet::parse_key_values(slurp("micro_run/model_card.txt"));
  auto b = hpnet::parse_key_values(slurp("ablated/model_card.txt"));
  CHECK(a.at("model.use_hpa") == "true");
  CHECK(b.at("model.use_hpa") == "false");
  a.erase("model.use_hpa");
  b.erase("model.use_hpa");
  b.erase("parameters");
  a.erase("parameters");
  CHECK(a == b);
  auto ra = hpnet::parse_key_values(slurp("micro_run/run_config.txt"));
  auto rb = hpnet::parse_key_values(slurp("ablated/run_config.txt"));
  for (const char* k : {"model.use_hpa", "path.out"}) {
    ra.erase(k);
    rb.erase(k);
  }
  CHECK(ra == rb);
}

TEST_CASE("predict with K=6") {
  const fs::path ckpt = toy_run() / "checkpoint.ckpt";
  REQUIRE(run("predict --checkpoint " + ckpt.string() + " --corpus toy_corpus --out pred6") == 0);
  const json doc = load("pred6/predictions.json");
  CHECK(doc.at("K") == 6);
  REQUIRE(doc.at("scenes").size() == 3);
  for (const auto& s : doc.at("scenes")) {
    const auto scene = hpnet::read_scene(work() / "toy_corpus" / s.at("path").get<std::string>());
    std::map<int, std::pair<int, double>> per_agent;
    for (const auto& r : s.at("records")) {
      CHECK(r.at("t") == 0);
      if (!r.at("valid").get<bool>()) continue;
      auto& [count, sum] = per_agent[r.at("agent").get<int>()];
      ++count;
      sum += r.at("score").get<double>();
      CHECK(r.at("trajectory").size() == 30);
    }
    CHECK(s.at("records").size() == scene.agents.size() * 6);
    CHECK(!per_agent.empty());
    for (const auto& [agent, cs] : per_agent) {
      CHECK(cs.first == 6);
      CHECK(std::abs(cs.second - 1.0) < 1e-12);
    }
  }
  const std::string first = slurp("pred6/predictions.json");
  REQUIRE(run("predict --checkpoint " + ckpt.string() + " --corpus toy_corpus --out pred6") == 0);
  CHECK(slurp("pred6/predictions.json") == first);

  REQUIRE(run("predict --all-steps --checkpoint " + ckpt.string() +
              " --scene toy_corpus/test/000001.json --out pred_all") == 0);
  const json all = load("pred_all/predictions.json");
  const auto scene = hpnet::read_scene(work() / "toy_corpus/test/000001.json");
  CHECK(all.at("scenes")[0].at("records").size() == 20 * scene.agents.size() * 6);
  CHECK(fs::exists(work() / "pred_all/run_config.txt"));
}

TEST_CASE("evaluate") {
  micro_ckpt();
  REQUIRE(run("generate " + kMicro + kStraight + "--split test --out straight_corpus") == 0);
  REQUIRE(run("evaluate --predictor cv --corpus straight_corpus --out eval_cv") == 0);
  const json cv = load("eval_cv/eval.json");
  CHECK(cv.at("aggregate").at("count").get<int>() > 0);
  CHECK(cv.at("aggregate").at("min_ade").get<double>() < 1e-6);
  CHECK(fs::exists(work() / "eval_cv/eval.csv"));
  CHECK(fs::exists(work() / "eval_cv/run_config.txt"));

  REQUIRE(run("generate " + kMicro + "--set data.min_agents=1 --set data.max_agents=1 --split test --out single") == 0);
  REQUIRE(run("predict --checkpoint micro_run/checkpoint.ckpt --corpus single --out single_pred") == 0);
  REQUIRE(run("evaluate --objective joint --predictions single_pred/predictions.json --corpus single --out "
              "single_eval") == 0);
  const json j = load("single_eval/eval.json").at("aggregate");
  CHECK(j.at("joint_count") == j.at("count"));
  CHECK(j.at("min_joint_ade").get<double>() == j.at("min_ade").get<double>());
  CHECK(j.at("min_joint_fde").get<double>() == j.at("min_fde").get<double>());

  REQUIRE(run("evaluate --checkpoint micro_run/checkpoint.ckpt --corpus single --out single_ckpt") == 0);
  CHECK(load("single_ckpt/eval.json").at("aggregate") == j);

  {
    std::ofstream f(work() / "empty.json");
    f << R"({"format":"hpnet-predictions","version":1,"scenes":[]})";
  }
  CHECK(run("evaluate --predictions empty.json --corpus single --out bad") == 4);
  CHECK(run("evaluate --corpus single --out bad") == 2);
}

TEST_CASE("rollout") {
  micro_ckpt();
  REQUIRE(run("train " + kMicro + "--seed 1 --ablate-hpa --corpus micro_corpus --out ablated_r") == 0);
  REQUIRE(run("rollout --checkpoint micro_run/checkpoint.ckpt --checkpoint ablated_r/checkpoint.ckpt --labels "
              "hpa,ablated --corpus micro_corpus --out roll") == 0);
  const std::string csv = slurp("roll/rollout_hpa.csv");
  CHECK(count_lines(csv) == 1 + 10);
  int stability_rows = 0;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) stability_rows += line.back() != ',';
  CHECK(stability_rows == 9);

  const std::string paired = slurp("roll/rollout_paired.csv");
  CHECK(paired.starts_with("step,hpa.min_ade,hpa.min_fde,hpa.b_min_fde,hpa.stability,ablated.min_ade,"));
  CHECK(count_lines(paired) == 11);
  CHECK(fs::exists(work() / "roll/run_config.txt"));

  const std::string first = slurp("roll/rollout_paired.csv");
  REQUIRE(run("rollout --checkpoint micro_run/checkpoint.ckpt --checkpoint ablated_r/checkpoint.ckpt --labels "
              "hpa,ablated --corpus micro_corpus --out roll") == 0);
  CHECK(slurp("roll/rollout_paired.csv") == first);

  REQUIRE(run("generate " + kMicro + kStraight + "--split stream --out straight_streams") == 0);
  REQUIRE(run("rollout " + kMicro + "--predictor cv --corpus straight_streams --out roll_cv") == 0);
  const json cv = load("roll_cv/rollout_cv.json");
  const auto& samples = cv.at("stability_samples");
  CHECK(samples.size() > 0);
  for (const auto& s : samples) CHECK(s.at(3).get<double>() < 1e-6);

  CHECK(run("rollout " + kMicro + "--predictor cv --steps 0 --corpus straight_streams --out bad") == 2);
  CHECK(run("rollout " + kMicro + "--predictor cv --steps 12 --corpus straight_streams --out bad") == 4);
}

TEST_CASE("plot") {
  micro_ckpt();
  REQUIRE(run("rollout " + kMicro + "--predictor cv --corpus micro_corpus --out roll_plot") == 0);
  REQUIRE(run("predict --checkpoint micro_run/checkpoint.ckpt --corpus micro_corpus --out plot_pred") == 0);
  REQUIRE(run("plot --report roll_plot/rollout_paired.csv --scene micro_corpus/test/000002.json --predictions "
              "plot_pred/predictions.json --out plots") == 0);
  for (const char* name : {"curves_min_ade.svg", "curves_stability.svg", "scene_000002.svg"}) {
    const std::string svg = slurp(fs::path("plots") / name);
    CHECK(svg.starts_with("<?xml"));
    CHECK(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\"") != std::string::npos);
    CHECK(svg.ends_with("</svg>\n"));
  }
  const std::string scene = slurp("plots/scene_000002.svg");
  auto count = [&](const std::string& needle) {
    int n = 0;
    for (auto at = scene.find(needle); at != std::string::npos; at = scene.find(needle, at + 1)) ++n;
    return n;
  };
  CHECK(count("class=\"prediction\"") == 2);
  CHECK(count("class=\"lane\"") > 0);
  CHECK(count("class=\"history\"") > 0);
  CHECK(count("class=\"ground-truth\"") > 0);
  CHECK(scene.find("class=\"lane\" fill=\"none\" stroke=\"#9e9e9e\"") != std::string::npos);
  CHECK(fs::exists(work() / "plots/run_config.txt"));

  CHECK(run("plot --out plots_bad") == 2);
  CHECK(run("plot --report nowhere.csv --out plots_bad") == 3);
}
