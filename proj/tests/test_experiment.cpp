/*
 * Software License Agreement (Apache License)
 *
 * Copyright (c) 2026, stso contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stso/error.hpp"
#include "stso/experiment.hpp"
#include "support.hpp"

using namespace stso;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = STSO_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stso_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

json small_heat() {
  auto doc = load_config_document(kSource / "configs" / "heat1d_desk.json");
  apply_override(doc, "K=4");
  apply_override(doc, "R=3");
  apply_override(doc, "J=12");
  apply_override(doc, "T=0.1");
  doc["checkpoint_every"] = 2;
  return doc;
}

fs::path write_config(const json& doc, const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stso_test_" + name + ".json");
  std::ofstream(p) << doc.dump(2);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(STSO_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("every shipped config parses and round trips") {
  for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
    CAPTURE(entry.path().string());
    const auto cfg = load_config(entry.path());
    const auto again = parse_config(to_json(cfg));
    CHECK(to_json(again) == to_json(cfg));
    CHECK(again.provenance == cfg.provenance);
  }
}

TEST_CASE("config errors name the offending field") {
  const auto expect_path = [](json doc, const std::string& path) {
    try {
      parse_config(doc);
      FAIL("accepted an invalid config: " << doc.dump());
    } catch (const ConfigError& e) {
      CHECK(e.path() == path);
    }
  };
  const json base = small_heat();
  expect_path(json::object(), "system");
  json d = base;
  d["bogus"] = 1;
  expect_path(d, "bogus");
  d = base;
  d["optimizer"]["rollouts"] = 0;
  expect_path(d, "optimizer.rollouts");
  d = base;
  d["time"]["dt"] = "fast";
  expect_path(d, "time.dt");
  d = base;
  d["cost"]["regions"][0]["channel"] = "pressure";
  expect_path(d, "cost.regions[0].channel");
  d = base;
  d["system"] = "pendulum";
  expect_path(d, "system");
  d = base;
  d["optimizer"]["gradient_mode"] = "sideways";
  expect_path(d, "optimizer.gradient_mode");
}

TEST_CASE("overrides accept aliases and dotted paths") {
  json doc = small_heat();
  apply_override(doc, "rho=inf");
  apply_override(doc, "optimizer.lr_theta=0.5");
  apply_override(doc, "policy.hidden=[3,2]");
  apply_override(doc, "physics.initial=sine");
  apply_override(doc, "seed=9");
  apply_override(doc, "dt=0.02");
  const auto cfg = parse_config(doc);
  CHECK(std::isinf(cfg.system.rho));
  CHECK(cfg.optimizer.lr_theta == 0.5);
  CHECK(cfg.policy.hidden == std::vector<int>{3, 2});
  CHECK(cfg.system.initial == "sine");
  CHECK(cfg.seed == 9);
  CHECK(cfg.system.dt == 0.02);
  CHECK(cfg.system.points[0] == 12);
  CHECK(cfg.optimizer.iterations == 4);
  CHECK(cfg.optimizer.rollouts == 3);
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);

  auto d2 = load_config_document(kSource / "configs" / "heat2d_desk.json");
  apply_override(d2, "J=9");
  const auto c2 = parse_config(d2);
  CHECK(c2.system.points == std::array<int, 2>{9, 9});
}

TEST_CASE("provenance tags paper values and defaults") {
  const auto cfg = load_config(kSource / "configs" / "softlimb.json");
  CHECK(cfg.provenance.at("grid.points") == "paper");
  CHECK(cfg.provenance.at("optimizer.lr_theta") == "artifact-default");
}

TEST_CASE("checkpoints round trip bitwise") {
  const auto cfg = parse_config(small_heat());
  const auto sys = make_system(cfg.system);
  TrainingState st = initial_training_state(cfg, *sys);
  run({*sys, cfg.cost, cfg.optimizer, cfg.seed}, st);
  const fs::path p = scratch("ckpt.bin");
  save_checkpoint(p, st, cfg.seed, "heat1d");
  TrainingState back = initial_training_state(cfg, *sys);
  const auto header = load_checkpoint(p, back);
  CHECK(header["iteration"] == st.iteration);
  CHECK(back.iteration == st.iteration);
  CHECK(back.design == st.design);
  CHECK(back.adam == st.adam);
  CHECK(std::vector<double>(back.policy.parameters().begin(), back.policy.parameters().end()) ==
        std::vector<double>(st.policy.parameters().begin(), st.policy.parameters().end()));

  std::string bytes = slurp(p);
  std::ofstream(p, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS(load_checkpoint(p, back));
  std::ofstream(p, std::ios::binary) << "not a checkpoint at all";
  CHECK_THROWS(load_checkpoint(p, back));
}

TEST_CASE("run writes the documented artifacts and resumes identically") {
  const fs::path dir = scratch("run");
  const fs::path cfg_path = write_config(small_heat(), "run");
  RunRequest req;
  req.config = cfg_path;
  req.out = dir;
  req.quiet = true;
  cmd_run(req);
  for (const char* f : {"manifest.json", "report.jsonl", "timing.jsonl", "trajectory_noise_on.csv",
                        "trajectory_noise_off.csv", "checkpoints/ckpt_0002.bin", "checkpoints/ckpt_0004.bin"})
    CHECK(fs::exists(dir / f));
  const auto report = lines(dir / "report.jsonl");
  REQUIRE(report.size() == 4);
  const auto first = json::parse(report[0]);
  for (const char* key : {"iteration", "loss", "mean_J", "min_J", "max_J", "mean_final_error", "diverged", "positions", "widths"})
    CHECK(first.contains(key));
  CHECK_FALSE(first.contains("wall_seconds"));
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["provenance"]["output"] == "override");

  RunRequest resume;
  resume.resume = dir / "checkpoints" / "ckpt_0002.bin";
  resume.quiet = true;
  cmd_run(resume);
  CHECK(lines(dir / "report.jsonl") == report);
  CHECK(lines(dir / "timing.jsonl").size() == 4);

  const fs::path dir4 = scratch("run4");
  RunRequest req4 = req;
  req4.out = dir4;
  req4.overrides = {"optimizer.workers=4"};
  cmd_run(req4);
  CHECK(slurp(dir4 / "report.jsonl") == slurp(dir / "report.jsonl"));

  ExportRequest ex{dir, "convergence", "noise_on", std::nullopt};
  cmd_export(ex);
  const auto conv = lines(dir / "export_convergence.csv");
  CHECK(conv.front() == "iteration,loss,mean_J");
  CHECK(conv.size() == 5);
  ex.kind = "final_snapshot";
  cmd_export(ex);
  const auto snap = lines(dir / "export_final_snapshot.csv");
  CHECK(snap.front() == "t,x,channel,value");
  CHECK(snap.size() == 13);
  ex.kind = "contour";
  ex.trajectory = "noise_off";
  cmd_export(ex);
  CHECK(lines(dir / "export_contour.csv").size() == 1 + 12 * 11);
  ex.kind = "histogram";
  CHECK_THROWS_AS(cmd_export(ex), ConfigError);
}

TEST_CASE("simulate writes rollouts and a summary") {
  const fs::path dir = scratch("sim");
  SimulateRequest req;
  req.config = write_config(small_heat(), "sim");
  req.rollouts = 3;
  req.out = dir;
  cmd_simulate(req);
  CHECK(fs::exists(dir / "rollout_000.csv"));
  CHECK(fs::exists(dir / "rollout_002.csv"));
  const auto summary = lines(dir / "summary.csv");
  CHECK(summary.front() == "t,x,channel,mean,two_sigma");
  CHECK(summary.size() == 1 + 12 * 11);
  req.source = "/nonexistent/ckpt.bin";
  CHECK_THROWS_AS(cmd_simulate(req), ConfigError);
  req.source = "zero";
  req.rollouts = 0;
  CHECK_THROWS_AS(cmd_simulate(req), ConfigError);
}

TEST_CASE("command line exit codes") {
  const fs::path good = write_config(small_heat(), "cli");
  json bad = small_heat();
  bad["optimizer"]["rollouts"] = -1;
  const fs::path bad_path = write_config(bad, "cli_bad");
  json boom = small_heat();
  boom["system"] = "softlimb";
  boom["grid"] = {{"points", {9, 3}}, {"extent", {8.0, 2.0}}};
  boom["time"] = {{"dt", 0.5}, {"horizon", 20.0}};
  boom["noise"]["rho"] = 0.01;
  boom["cost"]["regions"] = json::array({{{"channel", "d_y"}, {"lo", {8.0, 0.0}}, {"hi", {8.0, 2.0}}, {"target", 1.0}}});
  boom["actuators"] = {{"count", 2}, {"init_lo", {0.0, 0.0}}, {"init_hi", {8.0, 2.0}}, {"width", 1.0}};
  const fs::path boom_path = write_config(boom, "cli_boom");

  CHECK(cli("run --config " + good.string() + " --out " + scratch("cli_ok").string() + " --quiet") == 0);
  CHECK(cli("run --config " + bad_path.string() + " --out " + scratch("cli_bad").string()) == 2);
  CHECK(cli("run --config /nonexistent.json") == 2);
  CHECK(cli("run --config " + good.string() + " --override rho=inf --out " + scratch("cli_inf").string()) == 2);
  CHECK(cli("run --frobnicate") == 2);
  CHECK(cli("run --config " + boom_path.string() + " --out " + scratch("cli_boom").string() + " --quiet") == 3);
  CHECK(cli("export " + scratch("cli_missing").string() + " --kind contour") == 2);
  CHECK(cli("simulate --config " + good.string() + " --rollouts 2 --out " + scratch("cli_sim").string()) == 0);
}

TEST_CASE("trajectory csv lists every node of every state") {
  const auto cfg = parse_config(small_heat());
  const auto sys = make_system(cfg.system);
  const auto st = initial_training_state(cfg, *sys);
  const auto m = influence(st.design, sys->grid());
  RandomStream rng(StreamKey{});
  const auto traj = rollout(*sys, st.policy, m, sys->initial_state(rng), {1, StreamPurpose::kNoise, 0, 0, 0});
  const fs::path p = scratch("traj.csv");
  write_trajectory_csv(p, *sys, traj);
  const auto rows = lines(p);
  CHECK(rows.size() == 1 + traj.states.size() * 12);
  CHECK(rows[1].rfind("0,0,temperature,", 0) == 0);
}
