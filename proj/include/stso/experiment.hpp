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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stso/optimizer.hpp"

namespace stso {

struct PolicySpec {
  std::string kind = "mlp";  // "mlp" or "cnn"
  std::vector<int> hidden{64, 64};
  std::vector<int> filters{8, 16};
  int kernel = 3;
  bool zero_output_layer = false;
};

struct ActuatorSpec {
  int count = 3;
  std::array<double, 2> init_lo{0.0, 0.0};
  std::array<double, 2> init_hi{1.0, 1.0};
  double width = 0.1;
};

/// A fully resolved and validated experiment.
struct ExperimentConfig {
  SystemConfig system;
  CostSpec cost;
  PolicySpec policy;
  ActuatorSpec actuators;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;
  std::string output = "runs/out";
  int checkpoint_every = 0;
  /// Dotted key -> "paper", "artifact-default" or "override".
  std::map<std::string, std::string> provenance;
};

/// Parses a config document: defaults for the named system are applied
/// first, unknown keys are rejected. Throws ConfigError naming the field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json load_config_document(const std::filesystem::path& path);
/// Resolved config as a document that parse_config accepts.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Applies "key=value" to a config document. Keys are dotted paths or one of
/// the aliases K, R, J, T, dt, rho, seed. Values are parsed as JSON when possible.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Fresh policy for the config, with Xavier weights from the run seed.
Policy make_policy(const ExperimentConfig& cfg, const System& system);
/// Policy, actuator design and optimizer state at iteration 0.
TrainingState initial_training_state(const ExperimentConfig& cfg, const System& system);

/// Little-endian uint64 header length, JSON header, then float64 tensors.
void save_checkpoint(const std::filesystem::path& path, const TrainingState& state, std::uint64_t seed,
                     const std::string& system);
/// Restores into `state`, whose policy must already have the saved architecture.
/// Returns the header.
nlohmann::json load_checkpoint(const std::filesystem::path& path, TrainingState& state);

/// One report line. Wall time lives in a separate timing record so that
/// reports of identical runs compare equal byte for byte.
nlohmann::json report_line(const IterationRecord& rec);

/// Long-format CSV of a trajectory: t, x[, y], channel, value.
void write_trajectory_csv(const std::filesystem::path& path, const System& system, const Trajectory& traj);

struct RunRequest {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> resume;
  bool quiet = false;
};

struct SimulateRequest {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::string source = "zero";  // "zero" or a checkpoint path
  int rollouts = 10;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct ExportRequest {
  std::filesystem::path run_dir;
  std::string kind;                      // contour, final_snapshot, convergence
  std::string trajectory = "noise_on";  // which evaluation rollout
  std::optional<std::filesystem::path> out;
};

/// Exit codes: 0 ok, 2 configuration error, 3 run aborted, 1 anything else.
enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitAborted = 3 };

/// Trains and writes manifest.json, report.jsonl, timing.jsonl,
/// checkpoints/ckpt_NNNN.bin and the noise on/off evaluation trajectories.
void cmd_run(const RunRequest& req);
/// Writes rollout_NNN.csv per rollout and summary.csv (mean and 2 sigma).
void cmd_simulate(const SimulateRequest& req);
void cmd_export(const ExportRequest& req);

}  // namespace stso
