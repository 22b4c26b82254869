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

// Acceptance checks. Prints one PASS/FAIL line per criterion; the exit status
// is nonzero when any criterion outside the known-unattained list fails.
// Usage: stso_acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stso/actuation.hpp"
#include "stso/error.hpp"
#include "stso/experiment.hpp"
#include "stso/optimizer.hpp"
#include "stso/policy.hpp"
#include "stso/softlimb.hpp"
#include "stso/systems.hpp"

using namespace stso;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = STSO_SOURCE_DIR;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
  bool known_unattained = false;  // reported, but does not fail the binary
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1

double mode_decay_error(SystemId id, int points) {
  auto c = default_system_config(id);
  c.rho = kInf;
  c.points = {points, id == SystemId::kHeat2d ? points : 1};
  c.epsilon = 1.0;
  c.dt = 1e-4;
  c.initial = "sine";
  c.initial_mode = 1;
  c.initial_amplitude = 1.0;
  const auto sys = make_system(c);
  RandomStream rng({0, StreamPurpose::kTest});
  auto z = sys->initial_state(rng);
  std::vector<double> phi(sys->noise_size(), 0.0);
  const NoiseIncrement dw(sys->grid(), 1);
  const int steps = 1000;
  for (int s = 0; s < steps; ++s) sys->step(z, phi, dw);
  const double t = steps * c.dt;
  const double lambda = (id == SystemId::kHeat2d ? 2.0 : 1.0) * std::numbers::pi * std::numbers::pi;
  const Grid& g = sys->grid();
  double err = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    double s = std::sin(std::numbers::pi * g.coordinate(i, 0));
    if (g.dim == 2) s *= std::sin(std::numbers::pi * g.coordinate(i, 1));
    err = std::max(err, std::abs(z.data()[i] - std::exp(-lambda * t) * s));
  }
  return err;
}

Outcome solver_fidelity() {
  const double e1 = mode_decay_error(SystemId::kHeat1d, 64);
  const double e2 = mode_decay_error(SystemId::kHeat2d, 25);
  return {e1 < 1e-2 && e2 < 1e-2, fmt("sup error 1d %.2e, 2d %.2e (tol 1e-2)", e1, e2)};
}

// 2

Outcome noise_statistics() {
  const Grid g = make_grid_1d(1.0, 6);
  const double dt = 0.01;
  const int draws = 100000;
  RandomStream rng({2024, StreamPurpose::kTest});
  const std::size_t n = g.node_count();
  std::vector<double> sq(n, 0.0), sq4(n, 0.0), cross(n - 1, 0.0), cross2(n - 1, 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto w = sample_cylindrical_increment(g, dt, rng);
    const auto x = w.data();
    for (std::size_t i = 0; i < n; ++i) {
      sq[i] += x[i] * x[i];
      sq4[i] += x[i] * x[i] * x[i] * x[i];
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
      cross[i] += x[i] * x[i + 1];
      cross2[i] += x[i] * x[i] * x[i + 1] * x[i + 1];
    }
  }
  const double var = dt / g.cell_volume();
  double worst_var = 0.0, worst_corr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m2 = sq[i] / draws;
    const double se = std::sqrt((sq4[i] / draws - m2 * m2) / draws);
    worst_var = std::max(worst_var, std::abs(m2 - var) / se);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double c = cross[i] / draws;
    const double se = std::sqrt((cross2[i] / draws - c * c) / draws);
    worst_corr = std::max(worst_corr, std::abs(c) / se);
  }
  return {worst_var <= 3.0 && worst_corr <= 3.0,
          fmt("max |var - dt/h| = %.2f s.e., max |cov| = %.2f s.e. (tol 3)", worst_var, worst_corr)};
}

// 3

Outcome girsanov_martingale() {
  auto c = default_system_config(SystemId::kHeat1d);
  c.points = {32, 1};
  c.dt = 0.01;
  c.horizon = 0.5;
  c.rho = 1.0;
  c.initial = "sine";
  const auto sys = make_system(c);
  auto policy = Policy::mlp(32, {8}, 2);
  RandomStream init({1, StreamPurpose::kPolicyInit});
  policy.xavier_init(init);
  const auto design = make_design(sys->grid(), {0.3, 0.7}, {0.1, 0.1});
  const auto m = influence(design, sys->grid());
  const int rollouts = 10000;
  const double sr = std::sqrt(c.rho);
  double sum = 0.0, sum2 = 0.0, max_p = 0.0;
  for (int r = 0; r < rollouts; ++r) {
    const auto t = rollout(*sys, policy, m, initial_state_for(*sys, 3, 0, r),
                           {3, StreamPurpose::kNoise, 0, static_cast<std::uint32_t>(r), 0}, {false, true});
    const double x = std::exp(sr * t.N - 0.5 * c.rho * t.P);
    sum += x;
    sum2 += x * x;
    max_p = std::max(max_p, t.P);
  }
  const double mean = sum / rollouts;
  const double se = std::sqrt((sum2 / rollouts - mean * mean) / rollouts);
  return {std::abs(mean - 1.0) <= 3.0 * se, fmt("mean %.5f, s.e. %.5f, max rho P %.3f", mean, se, c.rho * max_p)};
}

// 4

Outcome gradient_oracle() {
  auto c = default_system_config(SystemId::kHeat1d);
  c.points = {16, 1};
  c.horizon = 0.05;
  c.initial = "sine";
  const auto sys = make_system(c);
  const Grid& g = sys->grid();
  auto policy = Policy::mlp(16, {8}, 3);
  RandomStream rng({4, StreamPurpose::kTest});
  std::vector<double> theta(policy.parameter_count());
  for (auto& x : theta) x = rng.uniform(-0.4, 0.4);
  policy.set_parameters(theta);
  const auto design = make_design(g, {0.27, 0.5, 0.81}, {0.12, 0.2, 0.15});
  CostSpec cost;
  cost.regions.push_back({0, {0.6, 0}, {1.0, 0}, 0.5, 1.0});
  const auto m = influence(design, g);
  const int R = 4;
  std::vector<Trajectory> batch;
  std::vector<double> costs;
  for (int r = 0; r < R; ++r) {
    batch.push_back(rollout(*sys, policy, m, initial_state_for(*sys, 4, 0, r), {4, StreamPurpose::kNoise, 0, static_cast<std::uint32_t>(r), 0}));
    costs.push_back(state_cost(batch.back().states, cost));
  }
  const double rho = c.rho;
  double worst = 0.0;
  for (FrozenNoise frozen : {FrozenNoise::kRecorded, FrozenNoise::kImplied}) {
    std::vector<RolloutStats> stats(R);
    for (int r = 0; r < R; ++r) {
      stats[r].J = costs[r];
      stats[r].N = compute_N(*sys, policy, m, batch[r], frozen);
      stats[r].P = compute_P(*sys, policy, m, batch[r]);
    }
    finalize_stats(stats, rho);
    const auto grad = loss_gradients(*sys, policy, design, batch, stats, rho, GradientMode::kLiteral, frozen);
    const auto loss = [&](const Policy& p, const ActuatorDesign& d) {
      return frozen_batch_loss(*sys, p, d, batch, costs, rho, frozen);
    };
    const auto rel = [](const std::vector<double>& a, const std::vector<double>& b) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        num += (a[k] - b[k]) * (a[k] - b[k]);
        den += b[k] * b[k];
      }
      return std::sqrt(num / den);
    };
    std::vector<double> fd_theta, fd_pos, fd_width;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      Policy pp = policy, pm = policy;
      auto tp = theta, tm = theta;
      tp[k] += 1e-6;
      tm[k] -= 1e-6;
      pp.set_parameters(tp);
      pm.set_parameters(tm);
      fd_theta.push_back((loss(pp, design) - loss(pm, design)) / 2e-6);
    }
    for (std::size_t k = 0; k < design.positions.size(); ++k) {
      auto dp = design, dm = design;
      dp.positions[k] += 1e-6;
      dm.positions[k] -= 1e-6;
      fd_pos.push_back((loss(policy, dp) - loss(policy, dm)) / 2e-6);
    }
    for (std::size_t k = 0; k < design.widths.size(); ++k) {
      auto dp = design, dm = design;
      dp.widths[k] += 1e-7;
      dm.widths[k] -= 1e-7;
      fd_width.push_back((loss(policy, dp) - loss(policy, dm)) / 2e-7);
    }
    worst = std::max({worst, rel(grad.theta, fd_theta), rel(grad.positions, fd_pos), rel(grad.widths, fd_width)});
  }
  return {worst < 1e-5, fmt("worst relative error %.2e over theta, x_p, x_c (tol 1e-5)", worst)};
}

// 5

Outcome sparse_dense() {
  RandomStream rng({5, StreamPurpose::kTest});
  const auto randomize = [&](Policy& p) {
    std::vector<double> t(p.parameter_count());
    for (auto& x : t) x = rng.uniform(-0.5, 0.5);
    p.set_parameters(t);
  };
  const auto dense = [](const Policy& p) {
    std::vector<double> out;
    for (std::size_t j = 0; j < p.input_size(); ++j) {
      std::vector<double> e(p.input_size(), 0.0);
      e[j] = 1.0;
      const auto y = p.forward(e);
      out.insert(out.end(), y.begin(), y.end());
    }
    return out;
  };
  auto mlp = Policy::mlp(64, {64, 64}, 3);
  randomize(mlp);
  const bool mlp_exact = mlp.sparse_forward_pass() == dense(mlp);
  auto cnn = Policy::cnn(1, 15, 15, {8, 16}, 3, 5);
  randomize(cnn);
  const auto s = cnn.sparse_forward_pass();
  const auto d = dense(cnn);
  double worst = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) worst = std::max(worst, std::abs(s[k] - d[k]));
  return {mlp_exact && worst <= 1e-12, fmt("mlp %s, cnn max diff %.2e (tol 1e-12)", mlp_exact ? "exact" : "differs", worst)};
}

// 6

Outcome weight_normalization() {
  RandomStream rng({6, StreamPurpose::kTest});
  double worst = 0.0;
  bool finite = true;
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform() * 500);
    const double scale = std::pow(10.0, rng.uniform(-2.0, 6.0));
    std::vector<double> jt(n);
    for (auto& x : jt) x = rng.uniform(-scale, scale);
    const auto w = gibbs_weights(jt, rng.uniform(0.01, 100.0));
    long double sum = 0.0L;
    for (double x : w) {
      finite = finite && std::isfinite(x) && x >= 0.0;
      sum += x;
    }
    worst = std::max(worst, static_cast<double>(std::abs(sum - 1.0L)));
  }
  return {finite && worst <= 1e-15, fmt("max |sum - 1| = %.2e over 2000 batches, |J~| up to 1e6", worst)};
}

// 7

Outcome snap_contract() {
  RandomStream rng({7, StreamPurpose::kTest});
  bool ok = true;
  for (int trial = 0; trial < 2000; ++trial) {
    const int points = 3 + static_cast<int>(rng.uniform() * 60);
    const Grid g = make_grid_1d(rng.uniform(0.5, 10.0), points);
    const double v = rng.uniform(0.0, g.extent[0]);
    const double s = snap_coordinate(v, g, 0);
    ok = ok && snap_coordinate(s, g, 0) == s && std::abs(s - v) <= 0.5 * g.spacing[0] * (1 + 1e-9);
  }
  const Grid tie = make_grid_1d(1.0, 11);
  ok = ok && std::abs(snap_coordinate(0.25, tie, 0) - 0.3) < 1e-12;
  int mismatches = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int points = 5 + static_cast<int>(rng.uniform() * 40);
    const Grid g = make_grid_1d(rng.uniform(0.5, 5.0), points);
    const double dx = g.spacing[0];
    const double step = rng.uniform(0.01, 0.49) * dx;
    auto d = make_design(g, {2 * dx}, {0.1});
    const double before = d.positions[0];
    long count = 0;
    while (d.positions[0] == before && count < 10000) {
      move_virtual_positions(d, std::vector<double>{step}, g);
      ++count;
    }
    mismatches += count != static_cast<long>(std::ceil(dx / (2 * step)));
  }
  return {ok && mismatches == 0, fmt("properties %s, crossing count mismatches %d/2000", ok ? "hold" : "violated", mismatches)};
}

// 8-10 share the training driver

ExperimentConfig desk(const std::string& name, std::uint64_t seed) {
  auto doc = load_config_document(kSource / "configs" / name);
  doc["seed"] = seed;
  return parse_config(doc);
}

OptimizationReport train(const ExperimentConfig& cfg, const System& sys, TrainingState& st) {
  return run({sys, cfg.cost, cfg.optimizer, cfg.seed}, st);
}

Outcome heat1d_desk() {
  double first = 0.0, last = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto cfg = desk("heat1d_desk.json", seed);
    const auto sys = make_system(cfg.system);
    auto st = initial_training_state(cfg, *sys);
    const auto rep = train(cfg, *sys, st);
    first += rep.iterations.front().mean_J / 3.0;
    last += rep.iterations.back().mean_J / 3.0;
    per_seed += fmt(" %.3f", rep.iterations.back().mean_J / rep.iterations.front().mean_J);
  }
  return {last <= 0.5 * first, fmt("final/first mean J = %.3f (tol 0.5); per seed%s", last / first, per_seed.c_str())};
}

/// Mean final-time target error of R rollouts with control switched off.
double uncontrolled_error(const ExperimentConfig& cfg, const System& sys, const TrainingState& st) {
  const auto m = influence(st.design, sys.grid());
  double sum = 0.0;
  const int R = cfg.optimizer.rollouts;
  for (int r = 0; r < R; ++r) {
    const auto t = rollout(sys, st.policy, m, initial_state_for(sys, cfg.seed, 0, r),
                           {cfg.seed, StreamPurpose::kNoise, 0, static_cast<std::uint32_t>(r), 0}, {false, true});
    sum += target_error(t.states.back(), cfg.cost);
  }
  return sum / R;
}

Outcome heat2d_desk() {
  const auto cfg = desk("heat2d_desk.json", 0);
  const auto sys = make_system(cfg.system);
  auto st = initial_training_state(cfg, *sys);
  const double base = uncontrolled_error(cfg, *sys, st);
  const auto rep = train(cfg, *sys, st);
  const double final_error = rep.iterations.back().mean_final_error;
  return {final_error <= 0.6 * base,
          fmt("final-time MSE %.4f vs uncontrolled %.4f (%.0f%% lower, need 40%%)", final_error, base,
              100.0 * (1.0 - final_error / base))};
}

Outcome softlimb() {
  auto c = default_system_config(SystemId::kSoftLimb2d);
  c.rho = kInf;
  c.gravity = 0.0;
  const auto sys = make_system(c);
  RandomStream rng({0, StreamPurpose::kTest});
  auto z = sys->initial_state(rng);
  const StateVector rest = z;
  std::vector<double> phi(sys->noise_size(), 0.0);
  const NoiseIncrement dw(sys->grid(), 2);
  for (int s = 0; s < 1000; ++s) sys->step(z, phi, dw);
  const bool fixed = z == rest;

  const Lattice lat{2, 1, 1.0};
  const Material mat;
  const double sx = 0.1, sy = -0.05;
  std::vector<double> d{0.0, sx, 0.0, sy}, v(4, 0.0), f(4);
  lattice_stress_force(lat, mat, d, v, f);
  const double ax = 1.0 + sx, ay = sy;
  const double sn = mat.tensile * (ax * ax + ay * ay - 1.0);
  const double fx = -(sn * ax) / 0.5, fy = -(sn * ay + mat.shear_modulus * 0.5 * ay) / 0.5;
  const double pair_err = std::max(std::abs(f[1] - fx), std::abs(f[3] - fy));

  const auto cfg = desk("softlimb_desk.json", 0);
  const auto limb = make_system(cfg.system);
  auto st = initial_training_state(cfg, *limb);
  std::string reach = "aborted";
  bool reached = false;
  try {
    const auto rep = train(cfg, *limb, st);
    const double e0 = rep.iterations.front().mean_final_error;
    const double e1 = rep.iterations.back().mean_final_error;
    reached = e1 <= 0.7 * e0;
    reach = fmt("tip error %.4f -> %.4f (%.0f%% lower, need 30%%)", e0, e1, 100.0 * (1.0 - e1 / e0));
  } catch (const RunAborted& e) {
    reach = std::string("run aborted: ") + e.what();
  }
  const bool statics = fixed && pair_err < 1e-10;
  // only the reaching half is exempt; see the README section on unattained criteria
  return {statics && reached, fmt("rest fixed point %s, pair force error %.1e; ", fixed ? "exact" : "drifts", pair_err) + reach,
          statics && !reached};
}

// 11

Outcome determinism() {
  auto doc = load_config_document(kSource / "configs" / "heat1d_desk.json");
  apply_override(doc, "K=20");
  apply_override(doc, "R=12");
  doc["checkpoint_every"] = 10;
  const fs::path cfg_path = fs::temp_directory_path() / "stso_accept_det.json";
  std::ofstream(cfg_path) << doc.dump();
  const auto report_of = [&](const std::string& tag, int workers) {
    const fs::path dir = fs::temp_directory_path() / ("stso_accept_det_" + tag);
    fs::remove_all(dir);
    RunRequest req;
    req.config = cfg_path;
    req.out = dir;
    req.quiet = true;
    req.overrides = {"optimizer.workers=" + std::to_string(workers)};
    cmd_run(req);
    std::ifstream in(dir / "report.jsonl", std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const auto a = report_of("w1", 1);
  const auto b = report_of("w1b", 1);
  const auto c = report_of("w3", 3);
  const auto d = report_of("w8", 8);
  const bool same = !a.empty() && a == b && a == c && a == d;
  return {same, fmt("report.jsonl of workers 1, 1, 3, 8 %s (%zu bytes)", same ? "identical" : "differ", a.size())};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "solver fidelity", solver_fidelity},
      {2, "noise statistics", noise_statistics},
      {3, "girsanov martingale", girsanov_martingale},
      {4, "gradient oracle", gradient_oracle},
      {5, "sparse/dense equivalence", sparse_dense},
      {6, "weight normalization", weight_normalization},
      {7, "snap-to-grid contract", snap_contract},
      {8, "heat-1d desk reaching", heat1d_desk},
      {9, "heat-2d desk reaching", heat2d_desk},
      {10, "soft limb", softlimb},
      {11, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool known = o.known_unattained;
    std::printf("[%s] criterion %2d %-26s %s  (%.1f s)%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, !o.pass && known ? "  [known unattained]" : "");
    std::fflush(stdout);
    if (!o.pass && !known) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
