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

#include "stso/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "stso/error.hpp"

namespace stso {

bool CostRegion::contains(const Grid& grid, std::size_t node) const {
  const double tol = 1e-9 * std::max(grid.spacing[0], grid.dim == 2 ? grid.spacing[1] : 0.0);
  for (int axis = 0; axis < grid.dim; ++axis) {
    const double x = grid.coordinate(node, axis);
    if (x < lo[axis] - tol || x > hi[axis] + tol) return false;
  }
  return true;
}

void CostSpec::validate(const Grid& grid, int channels) const {
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const auto& r = regions[k];
    const std::string path = "cost.regions[" + std::to_string(k) + "]";
    if (r.channel < 0 || r.channel >= channels) throw ConfigError(path + ".channel", "no such state channel");
    if (!(r.kappa >= 0.0) || !std::isfinite(r.kappa)) throw ConfigError(path + ".kappa", "must be finite and >= 0");
    if (!std::isfinite(r.target)) throw ConfigError(path + ".target", "must be finite");
    for (int axis = 0; axis < grid.dim; ++axis) {
      if (!(r.lo[axis] <= r.hi[axis])) throw ConfigError(path, "lo must not exceed hi");
      if (r.lo[axis] < 0.0 || r.hi[axis] > grid.extent[axis]) throw ConfigError(path, "region lies outside the domain");
    }
    bool any = false;
    for (std::size_t n = 0; n < grid.node_count() && !any; ++n) any = r.contains(grid, n);
    if (!any) throw ConfigError(path, "region contains no grid node");
  }
}

double state_cost(const StateVector& z, const CostSpec& cost) {
  double j = 0.0;
  const Grid& g = z.grid();
  for (const auto& r : cost.regions) {
    const auto h = z.channel(r.channel);
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      if (!r.contains(g, n)) continue;
      const double e = h[n] - r.target;
      j += r.kappa * e * e;
    }
  }
  return j;
}

double state_cost(std::span<const StateVector> states, const CostSpec& cost) {
  double j = 0.0;
  for (const auto& z : states) j += state_cost(z, cost);
  return j;
}

double target_error(const StateVector& z, const CostSpec& cost) {
  double sum = 0.0;
  std::size_t count = 0;
  const Grid& g = z.grid();
  for (const auto& r : cost.regions) {
    const auto h = z.channel(r.channel);
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      if (!r.contains(g, n)) continue;
      const double e = h[n] - r.target;
      sum += e * e;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

namespace {

/// u = policy(z), phi = control_field(z, M^T u).
void control_at(const System& system, const Policy& policy, const InfluenceMatrix& m, const StateVector& z,
                ForwardRecord& rec, std::vector<double>& a, std::vector<double>& phi) {
  policy.forward(z.data(), rec);
  a.resize(system.grid().node_count());
  phi.resize(system.noise_size());
  apply(m, rec.output(), a);
  system.control_field(z, a, phi);
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Trajectory rollout(const System& system, const Policy& policy, const InfluenceMatrix& m, const StateVector& initial,
                   StreamKey key, RolloutOptions options) {
  const Grid& g = system.grid();
  const int steps = system.config().steps();
  const double dt = system.config().dt;
  Trajectory t;
  t.states.reserve(static_cast<std::size_t>(steps) + 1);
  t.noise.reserve(static_cast<std::size_t>(steps));
  t.controls.reserve(static_cast<std::size_t>(steps));
  t.states.push_back(initial);
  StateVector z = initial;
  ForwardRecord rec;
  std::vector<double> a, phi, zero(system.noise_size(), 0.0);
  for (int s = 0; s < steps; ++s) {
    control_at(system, policy, m, z, rec, a, phi);
    if (!finite(rec.output()) || !finite(phi)) {
      t.diverged = true;
      break;
    }
    NoiseIncrement dw(g, system.noise_channels());
    if (options.noise) {
      key.step = static_cast<std::uint32_t>(s);
      RandomStream rng(key);
      dw = sample_cylindrical_increment(g, system.noise_channels(), dt, rng);
    }
    t.N += inner_product_channels(g, phi, dw.data());
    t.P += dt * inner_product_channels(g, phi, phi);
    try {
      system.step(z, options.apply_control ? std::span<const double>(phi) : std::span<const double>(zero), dw);
    } catch (const DivergedRollout&) {
      t.diverged = true;
      break;
    }
    t.controls.emplace_back(rec.output().begin(), rec.output().end());
    if (options.apply_control)
      t.fields.push_back(phi);
    else
      t.fields.push_back(zero);
    t.noise.push_back(std::move(dw));
    t.states.push_back(z);
  }
  return t;
}

namespace {

/// The increment paired with phi at step t under the chosen frozen quantity.
void frozen_increment(const System& system, const Trajectory& traj, std::size_t t, std::span<const double> phi,
                      FrozenNoise frozen, std::vector<double>& out) {
  const auto dw = traj.noise[t].data();
  out.assign(dw.begin(), dw.end());
  if (frozen == FrozenNoise::kRecorded) return;
  const double rho = system.config().rho;
  if (std::isinf(rho)) return;
  const double c = std::sqrt(rho) * system.config().dt;
  const auto& applied = traj.fields[t];
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= c * (phi[k] - applied[k]);
}

void check_recorded(const Trajectory& traj) {
  if (traj.noise.size() + 1 != traj.states.size() || traj.fields.size() != traj.noise.size())
    throw std::invalid_argument("trajectory has no recorded noise");
}

}  // namespace

double compute_N(const System& system, const Policy& policy, const InfluenceMatrix& m, const Trajectory& traj,
                 FrozenNoise frozen) {
  check_recorded(traj);
  ForwardRecord rec;
  std::vector<double> a, phi, dw;
  double n = 0.0;
  for (std::size_t t = 0; t < traj.noise.size(); ++t) {
    control_at(system, policy, m, traj.states[t], rec, a, phi);
    frozen_increment(system, traj, t, phi, frozen, dw);
    n += inner_product_channels(system.grid(), phi, dw);
  }
  return n;
}

double compute_P(const System& system, const Policy& policy, const InfluenceMatrix& m, const Trajectory& traj) {
  check_recorded(traj);
  ForwardRecord rec;
  std::vector<double> a, phi;
  double p = 0.0;
  for (std::size_t t = 0; t < traj.noise.size(); ++t) {
    control_at(system, policy, m, traj.states[t], rec, a, phi);
    p += system.config().dt * inner_product_channels(system.grid(), phi, phi);
  }
  return p;
}

double importance_cost(double J, double N, double P, double rho) { return J + N / std::sqrt(rho) + 0.5 * P; }

std::vector<double> gibbs_weights(std::span<const double> j_tilde, double rho) {
  if (j_tilde.empty()) throw std::invalid_argument("no rollouts to weight");
  double lo = std::numeric_limits<double>::infinity();
  for (double j : j_tilde)
    if (!std::isnan(j)) lo = std::min(lo, j);
  if (!std::isfinite(lo)) throw std::invalid_argument("rollout costs are all non-finite");
  std::vector<double> w(j_tilde.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < w.size(); ++r) {
    w[r] = std::isnan(j_tilde[r]) ? 0.0 : std::exp(-rho * (j_tilde[r] - lo));
    sum += w[r];
  }
  for (double& x : w) x /= sum;
  // fold the rounding residual into the largest weight, summing with Neumaier compensation
  double s = 0.0, comp = 0.0;
  for (double x : w) {
    const double t = s + x;
    comp += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  const auto top = std::max_element(w.begin(), w.end());
  *top += (1.0 - s) - comp;
  return w;
}

void finalize_stats(std::span<RolloutStats> stats, double rho) {
  std::vector<double> jt(stats.size());
  for (std::size_t r = 0; r < stats.size(); ++r) jt[r] = stats[r].J_tilde = importance_cost(stats[r].J, stats[r].N, stats[r].P, rho);
  const auto w = gibbs_weights(jt, rho);
  for (std::size_t r = 0; r < stats.size(); ++r) stats[r].weight = w[r];
}

namespace {
double log_ratio(const RolloutStats& s, double rho) { return -std::sqrt(rho) * s.N - 0.5 * rho * s.P; }
}  // namespace

double compute_loss(std::span<const RolloutStats> stats, double rho) {
  double l = 0.0;
  for (const auto& s : stats) l += s.weight * log_ratio(s, rho);
  return l;
}

std::vector<std::array<double, 2>> loss_partials(std::span<const RolloutStats> stats, double rho, GradientMode mode) {
  const double loss = compute_loss(stats, rho);
  std::vector<std::array<double, 2>> out(stats.size());
  for (std::size_t r = 0; r < stats.size(); ++r) {
    const double g =
        mode == GradientMode::kLiteral ? stats[r].weight * (1.0 + log_ratio(stats[r], rho) - loss) : stats[r].weight;
    out[r] = {-std::sqrt(rho) * g, -0.5 * rho * g};
  }
  return out;
}

namespace {

/// Adds one rollout's contribution to d/dtheta and d/dM.
void rollout_gradient(const System& system, const Policy& policy, const InfluenceMatrix& m, const Trajectory& traj,
                      double alpha, double beta, FrozenNoise frozen, std::span<double> dtheta, std::span<double> dm) {
  const Grid& g = system.grid();
  const std::size_t nodes = g.node_count();
  const int channels = system.noise_channels();
  const double dt = system.config().dt;
  // With the states frozen, dW depends on phi as well: d<phi, dW>/dphi = dW - sqrt(rho) dt phi.
  const double implied =
      frozen == FrozenNoise::kImplied && !std::isinf(system.config().rho) ? std::sqrt(system.config().rho) * dt : 0.0;
  ForwardRecord rec;
  std::vector<double> a, phi, dw, y(system.noise_size()), adj(nodes), du(static_cast<std::size_t>(m.count));
  for (std::size_t t = 0; t < traj.noise.size(); ++t) {
    const StateVector& z = traj.states[t];
    control_at(system, policy, m, z, rec, a, phi);
    frozen_increment(system, traj, t, phi, frozen, dw);
    for (int c = 0; c < channels; ++c)
      for (std::size_t n = 0; n < nodes; ++n) {
        const std::size_t k = c * nodes + n;
        y[k] = g.weight(n) * (alpha * (dw[k] - implied * phi[k]) + 2.0 * beta * dt * phi[k]);
      }
    system.control_adjoint(z, y, adj);
    const auto u = rec.output();
    for (int i = 0; i < m.count; ++i) {
      const auto row = m.row(i);
      double s = 0.0;
      for (std::size_t n = 0; n < nodes; ++n) s += row[n] * adj[n];
      du[i] = s;
      double* dmi = dm.data() + static_cast<std::size_t>(i) * nodes;
      for (std::size_t n = 0; n < nodes; ++n) dmi[n] += adj[n] * u[i];
    }
    policy.backward(rec, du, dtheta);
  }
}

}  // namespace

Gradients loss_gradients(const System& system, const Policy& policy, const ActuatorDesign& design,
                         std::span<const Trajectory> batch, std::span<const RolloutStats> stats, double rho,
                         GradientMode mode, FrozenNoise frozen, int workers) {
  if (batch.size() != stats.size()) throw std::invalid_argument("batch and stats sizes differ");
  if (policy.output_size() != static_cast<std::size_t>(design.count))
    throw std::invalid_argument("policy outputs do not match actuator count");
  const InfluenceMatrix m = influence(design, system.grid());
  const auto partials = loss_partials(stats, rho, mode);
  const std::size_t np = policy.parameter_count();
  const std::size_t nm = m.rows.size();
  const int R = static_cast<int>(batch.size());
  std::vector<double> theta(np * R, 0.0), dm(nm * R, 0.0);
  parallel_for(R, workers, [&](int r) {
    rollout_gradient(system, policy, m, batch[r], partials[r][0], partials[r][1], frozen,
                     std::span<double>(theta.data() + np * r, np), std::span<double>(dm.data() + nm * r, nm));
  });
  Gradients out;
  out.theta.assign(np, 0.0);
  std::vector<double> dm_sum(nm, 0.0);
  for (int r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < np; ++k) out.theta[k] += theta[np * r + k];
    for (std::size_t k = 0; k < nm; ++k) dm_sum[k] += dm[nm * r + k];
  }
  out.positions = placement_gradient(dm_sum, design, system.grid());
  out.widths = width_gradient(dm_sum, design, system.grid());
  return out;
}

double frozen_batch_loss(const System& system, const Policy& policy, const ActuatorDesign& design,
                         std::span<const Trajectory> batch, std::span<const double> state_costs, double rho,
                         FrozenNoise frozen) {
  const InfluenceMatrix m = influence(design, system.grid());
  std::vector<RolloutStats> stats(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    stats[r].J = state_costs[r];
    stats[r].N = compute_N(system, policy, m, batch[r], frozen);
    stats[r].P = compute_P(system, policy, m, batch[r]);
  }
  finalize_stats(stats, rho);
  return compute_loss(stats, rho);
}

std::vector<double> AdamGroup::update(std::span<const double> grad) {
  if (m.empty()) {
    m.assign(grad.size(), 0.0);
    v.assign(grad.size(), 0.0);
  }
  if (m.size() != grad.size()) throw std::invalid_argument("gradient shape does not match optimizer state");
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  std::vector<double> delta(grad.size());
  for (std::size_t k = 0; k < grad.size(); ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
    delta[k] = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
  }
  return delta;
}

void adam_step(AdamGroup& group, std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw std::invalid_argument("gradient shape does not match parameters");
  const auto delta = group.update(grad);
  for (std::size_t k = 0; k < params.size(); ++k) params[k] -= delta[k];
}

StateVector initial_state_for(const System& system, std::uint64_t seed, int iteration, int rollout) {
  RandomStream rng(StreamKey{seed, StreamPurpose::kInitialState, static_cast<std::uint32_t>(iteration),
                             static_cast<std::uint32_t>(rollout), 0});
  return system.initial_state(rng);
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  const int threads = std::min(std::max(workers, 1), count);
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

IterationRecord optimize_iteration(const RunContext& ctx, TrainingState& state) {
  const auto start = std::chrono::steady_clock::now();
  const System& system = ctx.system;
  const OptimizerSettings& set = ctx.settings;
  const double rho = system.config().rho;
  const int k = state.iteration;
  const int R = set.rollouts;
  const InfluenceMatrix m = influence(state.design, system.grid());

  std::vector<Trajectory> batch(R);
  std::vector<double> costs(R, 0.0), errors(R, 0.0);
  parallel_for(R, set.workers, [&](int r) {
    const StateVector init = initial_state_for(system, ctx.seed, k, r);
    StreamKey key{ctx.seed, StreamPurpose::kNoise, static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(r), 0};
    batch[r] = rollout(system, state.policy, m, init, key);
    if (batch[r].diverged) return;
    costs[r] = state_cost(batch[r].states, ctx.cost);
    errors[r] = target_error(batch[r].states.back(), ctx.cost);
    if (!std::isfinite(costs[r])) batch[r].diverged = true;
  });

  std::vector<Trajectory> kept;
  std::vector<RolloutStats> stats;
  IterationRecord rec;
  rec.iteration = k + 1;
  rec.min_J = std::numeric_limits<double>::infinity();
  rec.max_J = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < R; ++r) {
    if (batch[r].diverged) {
      ++rec.diverged;
      continue;
    }
    stats.push_back({costs[r], batch[r].N, batch[r].P, 0.0, 0.0});
    rec.mean_J += costs[r];
    rec.mean_final_error += errors[r];
    rec.min_J = std::min(rec.min_J, costs[r]);
    rec.max_J = std::max(rec.max_J, costs[r]);
    kept.push_back(std::move(batch[r]));
  }
  if (rec.diverged > 0 && rec.diverged >= set.max_diverged_fraction * R)
    throw RunAborted("iteration " + std::to_string(k + 1) + ": " + std::to_string(rec.diverged) + " of " +
                     std::to_string(R) + " rollouts diverged");
  rec.mean_J /= static_cast<double>(kept.size());
  rec.mean_final_error /= static_cast<double>(kept.size());

  finalize_stats(stats, rho);
  rec.loss = compute_loss(stats, rho);
  const Gradients grad = loss_gradients(system, state.policy, state.design, kept, stats, rho, set.mode, set.frozen, set.workers);

  if (set.lr_theta > 0.0) {
    state.adam.theta.lr = set.lr_theta;
    auto params = state.policy.mutable_parameters();
    adam_step(state.adam.theta, params, grad.theta);
  }
  if (set.lr_positions > 0.0) {
    state.adam.positions.lr = set.lr_positions;
    auto delta = state.adam.positions.update(grad.positions);
    for (double& d : delta) d = -d;
    move_virtual_positions(state.design, delta, system.grid());
  }
  if (set.lr_widths > 0.0) {
    state.adam.widths.lr = set.lr_widths;
    auto delta = state.adam.widths.update(grad.widths);
    for (double& d : delta) d = -d;
    move_widths(state.design, delta, system.grid());
  }
  state.iteration = k + 1;
  rec.positions = state.design.positions;
  rec.widths = state.design.widths;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

OptimizationReport run(const RunContext& ctx, TrainingState& state,
                       const std::function<void(const IterationRecord&, const TrainingState&)>& on_iteration) {
  OptimizationReport report;
  while (state.iteration < ctx.settings.iterations) {
    report.iterations.push_back(optimize_iteration(ctx, state));
    if (on_iteration) on_iteration(report.iterations.back(), state);
  }
  return report;
}

}  // namespace stso
