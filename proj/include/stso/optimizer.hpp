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
#include <functional>
#include <span>
#include <vector>

#include "stso/actuation.hpp"
#include "stso/policy.hpp"
#include "stso/systems.hpp"

namespace stso {

/// Axis-aligned interval (1D) or rectangle (2D) on one state channel with a
/// desired value and weight kappa.
struct CostRegion {
  int channel = 0;
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{0.0, 0.0};
  double target = 1.0;
  double kappa = 1.0;

  bool contains(const Grid& grid, std::size_t node) const;
};

struct CostSpec {
  std::vector<CostRegion> regions;

  /// Rejects regions outside the domain, empty regions, bad channels, kappa < 0.
  void validate(const Grid& grid, int channels) const;
};

/// Sum over region nodes of kappa (h - h_des)^2 for one state.
double state_cost(const StateVector& z, const CostSpec& cost);
/// Sum of the per-state cost over every recorded state.
double state_cost(std::span<const StateVector> states, const CostSpec& cost);
/// Mean squared deviation from the targets over all region nodes.
double target_error(const StateVector& z, const CostSpec& cost);

/// States z_0..z_T, raw increments dW_0..dW_{T-1} (before the 1/sqrt(rho)
/// scaling), the commands u_t and the control fields phi_t applied at each step.
struct Trajectory {
  std::vector<StateVector> states;
  std::vector<NoiseIncrement> noise;
  std::vector<std::vector<double>> controls;
  std::vector<std::vector<double>> fields;
  double N = 0.0;  // accumulated while rolling out
  double P = 0.0;
  bool diverged = false;
};

struct RolloutOptions {
  bool apply_control = true;  // false samples the uncontrolled system but still records u_t
  bool noise = true;
};

/// Runs one rollout. Noise for step t is drawn from `key` with key.step = t.
/// A non-finite state ends the rollout early with `diverged` set.
Trajectory rollout(const System& system, const Policy& policy, const InfluenceMatrix& m, const StateVector& initial,
                   StreamKey key, RolloutOptions options = {});

/// What stays fixed when the loss is re-evaluated at new parameters.
enum class FrozenNoise {
  kRecorded,  // the sampled dW_t
  kImplied,   // the sampled states: dW_t - sqrt(rho) dt (phi_t - applied phi_t)
};

/// sum_t <phi_t, dW_t> with phi_t = control_field(z_t, M^T u_t) and u_t
/// re-evaluated from the policy at the recorded states.
double compute_N(const System& system, const Policy& policy, const InfluenceMatrix& m, const Trajectory& traj,
                 FrozenNoise frozen = FrozenNoise::kRecorded);
/// sum_t dt <phi_t, phi_t>.
double compute_P(const System& system, const Policy& policy, const InfluenceMatrix& m, const Trajectory& traj);

struct RolloutStats {
  double J = 0.0;
  double N = 0.0;
  double P = 0.0;
  double J_tilde = 0.0;
  double weight = 0.0;
};

/// J + N / sqrt(rho) + P / 2.
double importance_cost(double J, double N, double P, double rho);
/// Softmax of -rho * J_tilde, shifted by the smallest cost.
std::vector<double> gibbs_weights(std::span<const double> j_tilde, double rho);
/// Fills J_tilde and weight from J, N, P.
void finalize_stats(std::span<RolloutStats> stats, double rho);
/// sum_r w_r (-sqrt(rho) N_r - rho/2 P_r).
double compute_loss(std::span<const RolloutStats> stats, double rho);

enum class GradientMode {
  kLiteral,      // differentiate through the weights as well
  kStopWeights,  // treat w_r as constants
};

/// dL/dN_r and dL/dP_r per rollout.
std::vector<std::array<double, 2>> loss_partials(std::span<const RolloutStats> stats, double rho, GradientMode mode);

struct Gradients {
  std::vector<double> theta;
  std::vector<double> positions;  // count * dim
  std::vector<double> widths;
};

/// Gradients of the loss with the rollout states held fixed.
Gradients loss_gradients(const System& system, const Policy& policy, const ActuatorDesign& design,
                         std::span<const Trajectory> batch, std::span<const RolloutStats> stats, double rho,
                         GradientMode mode, FrozenNoise frozen = FrozenNoise::kRecorded, int workers = 1);

/// Recomputes N, P and the loss for a frozen batch with given state costs.
double frozen_batch_loss(const System& system, const Policy& policy, const ActuatorDesign& design,
                         std::span<const Trajectory> batch, std::span<const double> state_costs, double rho,
                         FrozenNoise frozen = FrozenNoise::kRecorded);

/// Bias-corrected ADAM for one parameter group.
struct AdamGroup {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  /// Returns the step to add to the parameters; moments are updated.
  std::vector<double> update(std::span<const double> grad);
  bool operator==(const AdamGroup&) const = default;
};

struct AdamState {
  AdamGroup theta;
  AdamGroup positions;
  AdamGroup widths;
  bool operator==(const AdamState&) const = default;
};

/// Applies one update in place: params -= step.
void adam_step(AdamGroup& group, std::span<double> params, std::span<const double> grad);

struct OptimizerSettings {
  int iterations = 1;
  int rollouts = 1;
  double lr_theta = 1e-3;
  double lr_positions = 3e-2;
  double lr_widths = 1e-3;
  GradientMode mode = GradientMode::kLiteral;
  FrozenNoise frozen = FrozenNoise::kImplied;
  int workers = 1;
  double max_diverged_fraction = 0.2;
};

/// Everything that changes from one iteration to the next.
struct TrainingState {
  Policy policy;
  ActuatorDesign design;
  AdamState adam;
  int iteration = 0;  // completed iterations
};

struct IterationRecord {
  int iteration = 0;  // 1-based
  double loss = 0.0;
  double mean_J = 0.0;
  double min_J = 0.0;
  double max_J = 0.0;
  double mean_final_error = 0.0;
  int diverged = 0;
  std::vector<double> positions;
  std::vector<double> widths;
  double wall_seconds = 0.0;
};

struct OptimizationReport {
  std::vector<IterationRecord> iterations;
};

/// Fixed inputs of one run. All randomness derives from `seed`.
struct RunContext {
  const System& system;
  const CostSpec& cost;
  const OptimizerSettings& settings;
  std::uint64_t seed = 0;
};

/// Samples R rollouts at the current parameters, evaluates the loss,
/// and applies one ADAM update to the policy, placements and widths.
IterationRecord optimize_iteration(const RunContext& ctx, TrainingState& state);

/// Iterates until state.iteration == settings.iterations. `on_iteration` runs
/// after every update, on the calling thread.
OptimizationReport run(const RunContext& ctx, TrainingState& state,
                       const std::function<void(const IterationRecord&, const TrainingState&)>& on_iteration = {});

/// Initial state for rollout r of an iteration, drawn from its own stream.
StateVector initial_state_for(const System& system, std::uint64_t seed, int iteration, int rollout);

/// Runs `count` independent tasks on up to `workers` threads.
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

}  // namespace stso
