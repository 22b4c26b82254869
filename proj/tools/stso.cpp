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

// Command-line front end: stso run | simulate | export.

#include <CLI11.hpp>
#include <iostream>

#include "stso/error.hpp"
#include "stso/experiment.hpp"

int main(int argc, char** argv) {
  using namespace stso;
  CLI::App app{"Joint policy and actuator placement optimization for stochastic PDEs"};
  app.require_subcommand(1);

  RunRequest run;
  std::string run_config, run_out, run_resume;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "train a policy and actuator layout");
  run_cmd->add_option("--config", run_config, "experiment config (JSON)");
  run_cmd->add_option("--override", run.overrides, "key=value, e.g. K=200 R=50 J=32 optimizer.lr_theta=0.01");
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "random seed");
  run_cmd->add_option("--out", run_out, "output directory");
  run_cmd->add_option("--resume", run_resume, "checkpoint file or name (ckpt_0100)");
  run_cmd->add_flag("--quiet", run.quiet, "no progress lines");

  SimulateRequest sim;
  std::string sim_config, sim_out;
  std::uint64_t sim_seed = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "roll out a zero or trained policy");
  sim_cmd->add_option("--config", sim_config, "experiment config (JSON)")->required();
  sim_cmd->add_option("--override", sim.overrides, "key=value");
  sim_cmd->add_option("--source", sim.source, "zero or a checkpoint path");
  sim_cmd->add_option("--rollouts", sim.rollouts, "number of rollouts");
  auto* sim_seed_opt = sim_cmd->add_option("--seed", sim_seed, "random seed");
  sim_cmd->add_option("--out", sim_out, "output directory");

  ExportRequest exp;
  std::string exp_dir, exp_out;
  auto* exp_cmd = app.add_subcommand("export", "write plot data from a run directory");
  exp_cmd->add_option("run_dir", exp_dir, "run output directory")->required();
  exp_cmd->add_option("--kind", exp.kind, "contour, final_snapshot or convergence")->required();
  exp_cmd->add_option("--trajectory", exp.trajectory, "noise_on or noise_off");
  exp_cmd->add_option("--out", exp_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) {
      if (!run_config.empty()) run.config = run_config;
      if (!run_out.empty()) run.out = run_out;
      if (!run_resume.empty()) run.resume = run_resume;
      if (*run_seed_opt) run.seed = run_seed;
      cmd_run(run);
    } else if (*sim_cmd) {
      sim.config = sim_config;
      if (!sim_out.empty()) sim.out = sim_out;
      if (*sim_seed_opt) sim.seed = sim_seed;
      cmd_simulate(sim);
    } else {
      exp.run_dir = exp_dir;
      if (!exp_out.empty()) exp.out = exp_out;
      cmd_export(exp);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RunAborted& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    return kExitAborted;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
