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

#include "stso/systems.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stso/error.hpp"
#include "stso/softlimb.hpp"

namespace stso {

std::string to_string(SystemId id) {
  switch (id) {
    case SystemId::kHeat1d: return "heat1d";
    case SystemId::kBurgers1d: return "burgers1d";
    case SystemId::kNagumo1d: return "nagumo";
    case SystemId::kEulerBernoulli1d: return "euler_bernoulli";
    case SystemId::kHeat2d: return "heat2d";
    case SystemId::kSoftLimb2d: return "softlimb";
  }
  return "unknown";
}

SystemId system_id_from_string(const std::string& name) {
  for (auto id : {SystemId::kHeat1d, SystemId::kBurgers1d, SystemId::kNagumo1d, SystemId::kEulerBernoulli1d,
                  SystemId::kHeat2d, SystemId::kSoftLimb2d})
    if (to_string(id) == name) return id;
  throw ConfigError("system", "unknown system '" + name + "'");
}

int SystemConfig::steps() const { return static_cast<int>(std::lround(horizon / dt)); }

Grid SystemConfig::grid() const {
  if (id == SystemId::kHeat2d || id == SystemId::kSoftLimb2d) return make_grid_2d(extent[0], extent[1], points[0], points[1]);
  return make_grid_1d(extent[0], points[0]);
}

double SystemConfig::noise_scale() const { return std::isinf(rho) ? 0.0 : 1.0 / std::sqrt(rho); }

void SystemConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time.dt", "must be positive");
  if (!(horizon >= dt)) throw ConfigError("time.horizon", "must be at least dt");
  if (!(rho > 0.0)) throw ConfigError("noise.rho", "must be positive");
  for (double p : {epsilon, alpha, boundary_value, kelvin_voigt, viscous_damping, density, tensile, shear_modulus,
                   retardation, gravity, gravity_scale, actuation_gain, initial_amplitude})
    if (!std::isfinite(p)) throw ConfigError("physics", "parameters must be finite");
  if (kelvin_voigt < 0.0 || viscous_damping < 0.0) throw ConfigError("physics", "damping must be non-negative");
  if (!(density > 0.0)) throw ConfigError("physics.density", "must be positive");
  try {
    (void)grid();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("grid", e.what());
  }
}

SystemConfig default_system_config(SystemId id) {
  SystemConfig c;
  c.id = id;
  switch (id) {
    case SystemId::kHeat1d:
      c.extent = {1.0, 0.0};
      c.points = {64, 1};
      c.epsilon = 1.0;
      c.rho = 1.0;
      c.initial = "zero";
      break;
    case SystemId::kBurgers1d:
      c.extent = {1.0, 0.0};
      c.points = {64, 1};
      c.epsilon = 0.1;
      c.boundary_value = 1.0;
      c.rho = 1.0;
      c.initial = "zero";
      break;
    case SystemId::kNagumo1d:
      c.extent = {20.0, 0.0};
      c.points = {64, 1};
      c.epsilon = 1.0;
      c.alpha = -0.5;
      c.horizon = 3.5;
      c.dt = 0.01;
      c.rho = 10.0;
      c.initial = "nagumo_front";
      break;
    case SystemId::kEulerBernoulli1d:
      c.extent = {1.0, 0.0};
      c.points = {32, 1};
      c.dt = 1e-3;
      c.kelvin_voigt = 1e-3;
      c.viscous_damping = 0.0;
      c.rho = 1.0;
      c.initial = "sine";
      c.initial_mode = 2;
      c.initial_amplitude = 0.1;
      break;
    case SystemId::kHeat2d:
      c.extent = {1.0, 1.0};
      c.points = {25, 25};
      c.epsilon = 0.05;
      c.rho = 1.0;
      c.initial = "random";
      c.initial_amplitude = 0.1;
      break;
    case SystemId::kSoftLimb2d:
      c.extent = {8.0, 2.0};
      c.points = {9, 3};
      c.dt = 0.005;
      c.rho = 1.0;
      c.initial = "rest";
      break;
  }
  return c;
}

System::System(SystemConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  grid_ = cfg_.grid();
}

void System::control_field(const StateVector&, std::span<const double> a, std::span<double> phi) const {
  std::copy(a.begin(), a.end(), phi.begin());
  if (pinned_boundary())
    for (std::size_t i = 0; i < phi.size(); ++i)
      if (grid_.on_boundary(i)) phi[i] = 0.0;
}

void System::control_adjoint(const StateVector&, std::span<const double> y, std::span<double> out) const {
  std::copy(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(out.size()), out.begin());
  if (pinned_boundary())
    for (std::size_t i = 0; i < out.size(); ++i)
      if (grid_.on_boundary(i)) out[i] = 0.0;
}

void System::check_finite(const StateVector& z) const {
  if (!z.all_finite()) throw DivergedRollout(to_string(cfg_.id) + ": non-finite state");
}

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

class SparseSolver {
 public:
  void factorize(const SpMat& m) {
    matrix_ = m;
    lu_.analyzePattern(matrix_);
    lu_.factorize(matrix_);
    if (lu_.info() != Eigen::Success) throw std::runtime_error("implicit step matrix is singular");
  }
  void solve_in_place(std::span<double> x) const {
    Eigen::Map<Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd sol = lu_.solve(v);
    v = sol;
  }
  const SpMat& matrix() const { return matrix_; }

 private:
  SpMat matrix_;
  Eigen::SparseLU<SpMat> lu_;
};

/// Shared machinery for first-order 1D/2D fields: (I - eps dt L) u+ = rhs.
class DiffusionSystem : public System {
 public:
  enum class Boundary { kDirichlet, kNeumann };

  DiffusionSystem(SystemConfig cfg, Boundary bc, double boundary_value)
      : System(std::move(cfg)), bc_(bc), boundary_value_(boundary_value) {
    const std::size_t n = grid_.node_count();
    Triplets t;
    const double e = cfg_.epsilon * cfg_.dt;
    for (std::size_t node = 0; node < n; ++node) {
      const auto row = static_cast<Eigen::Index>(node);
      if (bc_ == Boundary::kDirichlet && grid_.on_boundary(node)) {
        t.emplace_back(row, row, 1.0);
        continue;
      }
      double diag = 1.0;
      for (int axis = 0; axis < grid_.dim; ++axis) {
        const double h2 = grid_.spacing[axis] * grid_.spacing[axis];
        const int i = axis == 0 ? grid_.ix(node) : grid_.iy(node);
        const int np = grid_.points[axis];
        const std::ptrdiff_t stride = axis == 0 ? 1 : grid_.points[0];
        diag += 2.0 * e / h2;
        // mirrored ghost nodes for Neumann ends
        if (i == 0) {
          t.emplace_back(row, row + stride, -2.0 * e / h2);
        } else if (i == np - 1) {
          t.emplace_back(row, row - stride, -2.0 * e / h2);
        } else {
          t.emplace_back(row, row - stride, -e / h2);
          t.emplace_back(row, row + stride, -e / h2);
        }
      }
      t.emplace_back(row, row, diag);
    }
    SpMat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    solver_.factorize(m);
  }

  int state_channels() const override { return 1; }
  bool pinned_boundary() const override { return bc_ == Boundary::kDirichlet; }

  void step(StateVector& z, std::span<const double> phi, const NoiseIncrement& dw) const override {
    auto u = z.channel(0);
    const auto noise = dw.channel(0);
    const double sigma = cfg_.noise_scale();
    explicit_terms(z, rhs_scratch());
    auto& rhs = rhs_scratch();
    for (std::size_t i = 0; i < u.size(); ++i) rhs[i] = u[i] + cfg_.dt * (rhs[i] + phi[i]) + sigma * noise[i];
    if (bc_ == Boundary::kDirichlet)
      for (std::size_t i = 0; i < u.size(); ++i)
        if (grid_.on_boundary(i)) rhs[i] = boundary_value_;
    solver_.solve_in_place(rhs);
    std::copy(rhs.begin(), rhs.end(), u.begin());
    check_finite(z);
  }

 protected:
  /// Explicit (nonlinear) tendency evaluated at the current state.
  virtual void explicit_terms(const StateVector& z, std::vector<double>& out) const {
    out.assign(z.channel(0).size(), 0.0);
  }

  std::vector<double>& rhs_scratch() const {
    thread_local std::vector<double> buf;
    return buf;
  }

  Boundary bc_;
  double boundary_value_;
  SparseSolver solver_;
};

class Heat1d final : public DiffusionSystem {
 public:
  explicit Heat1d(SystemConfig cfg) : DiffusionSystem(std::move(cfg), Boundary::kDirichlet, 0.0) {}
  std::vector<std::string> channel_names() const override { return {"temperature"}; }
  StateVector initial_state(RandomStream& rng) const override;
};

class Heat2d final : public DiffusionSystem {
 public:
  explicit Heat2d(SystemConfig cfg) : DiffusionSystem(std::move(cfg), Boundary::kDirichlet, 0.0) {}
  std::vector<std::string> channel_names() const override { return {"temperature"}; }
  StateVector initial_state(RandomStream& rng) const override;
};

class Burgers1d final : public DiffusionSystem {
 public:
  explicit Burgers1d(SystemConfig cfg)
      : DiffusionSystem(cfg, Boundary::kDirichlet, cfg.boundary_value) {}
  std::vector<std::string> channel_names() const override { return {"velocity"}; }
  StateVector initial_state(RandomStream& rng) const override;

 protected:
  void explicit_terms(const StateVector& z, std::vector<double>& out) const override {
    const auto h = z.channel(0);
    out.assign(h.size(), 0.0);
    const double inv2h = 1.0 / (2.0 * grid_.spacing[0]);
    for (std::size_t i = 1; i + 1 < h.size(); ++i) out[i] = -h[i] * (h[i + 1] - h[i - 1]) * inv2h;
  }
};

class Nagumo1d final : public DiffusionSystem {
 public:
  explicit Nagumo1d(SystemConfig cfg) : DiffusionSystem(std::move(cfg), Boundary::kNeumann, 0.0) {}
  std::vector<std::string> channel_names() const override { return {"voltage"}; }
  StateVector initial_state(RandomStream& rng) const override;

 protected:
  void explicit_terms(const StateVector& z, std::vector<double>& out) const override {
    const auto h = z.channel(0);
    out.resize(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * (1.0 - h[i]) * (h[i] - cfg_.alpha);
  }
};

StateVector sine_profile(const Grid& g, int channels, double amplitude, int mode) {
  StateVector z(g, channels);
  auto u = z.channel(0);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (g.on_boundary(i)) continue;
    double v = amplitude * std::sin(mode * std::numbers::pi * g.coordinate(i, 0) / g.extent[0]);
    if (g.dim == 2) v *= std::sin(mode * std::numbers::pi * g.coordinate(i, 1) / g.extent[1]);
    u[i] = v;
  }
  return z;
}

StateVector dirichlet_initial(const SystemConfig& cfg, const Grid& g, RandomStream& rng, double boundary) {
  StateVector z(g, 1);
  if (cfg.initial == "sine") {
    z = sine_profile(g, 1, cfg.initial_amplitude, cfg.initial_mode);
  } else if (cfg.initial == "random") {
    auto u = z.channel(0);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      const double r = rng.uniform(-cfg.initial_amplitude, cfg.initial_amplitude);
      if (!g.on_boundary(i)) u[i] = r;
    }
  } else if (cfg.initial != "zero") {
    throw ConfigError("physics.initial", "unsupported initial condition '" + cfg.initial + "'");
  }
  auto u = z.channel(0);
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.on_boundary(i)) u[i] = boundary;
  return z;
}

StateVector Heat1d::initial_state(RandomStream& rng) const { return dirichlet_initial(cfg_, grid_, rng, 0.0); }
StateVector Heat2d::initial_state(RandomStream& rng) const { return dirichlet_initial(cfg_, grid_, rng, 0.0); }
StateVector Burgers1d::initial_state(RandomStream& rng) const {
  return dirichlet_initial(cfg_, grid_, rng, cfg_.boundary_value);
}

StateVector Nagumo1d::initial_state(RandomStream& rng) const {
  if (cfg_.initial != "nagumo_front") return dirichlet_initial(cfg_, grid_, rng, 0.0);
  StateVector z(grid_, 1);
  auto u = z.channel(0);
  for (std::size_t i = 0; i < grid_.node_count(); ++i)
    u[i] = 1.0 / (1.0 + std::exp(-(2.0 - grid_.coordinate(i, 0)) / std::numbers::sqrt2));
  return z;
}

/// Simply supported beam lifted to (y, v); backward Euler on the linear part.
class EulerBernoulli1d final : public System {
 public:
  explicit EulerBernoulli1d(SystemConfig cfg) : System(std::move(cfg)) {
    const int n = grid_.points[0] - 2;  // interior unknowns
    const double h2 = grid_.spacing[0] * grid_.spacing[0];
    Triplets t;
    for (int i = 0; i < n; ++i) {
      t.emplace_back(i, i, -2.0 / h2);
      if (i > 0) t.emplace_back(i, i - 1, 1.0 / h2);
      if (i + 1 < n) t.emplace_back(i, i + 1, 1.0 / h2);
    }
    // A0 = T^2 with T the Dirichlet second difference: equivalent to the
    // biharmonic stencil with antisymmetric ghosts (zero moment at the ends).
    SpMat lap(n, n);
    lap.setFromTriplets(t.begin(), t.end());
    a0_ = (lap * lap).pruned();
    a0_.makeCompressed();
    SpMat id(n, n);
    id.setIdentity();
    const double dt = cfg_.dt;
    SpMat m = (1.0 + dt * cfg_.viscous_damping) * id + (dt * dt + dt * cfg_.kelvin_voigt) * a0_;
    m.makeCompressed();
    solver_.factorize(m);
  }

  int state_channels() const override { return 2; }
  bool pinned_boundary() const override { return true; }
  std::vector<std::string> channel_names() const override { return {"deflection", "deflection_velocity"}; }

  StateVector initial_state(RandomStream& rng) const override {
    StateVector z(grid_, 2);
    if (cfg_.initial == "sine") {
      const auto s = sine_profile(grid_, 1, cfg_.initial_amplitude, cfg_.initial_mode);
      std::copy(s.channel(0).begin(), s.channel(0).end(), z.channel(0).begin());
    } else if (cfg_.initial == "random") {
      auto y = z.channel(0);
      for (std::size_t i = 1; i + 1 < y.size(); ++i) y[i] = rng.uniform(-cfg_.initial_amplitude, cfg_.initial_amplitude);
    } else if (cfg_.initial != "zero") {
      throw ConfigError("physics.initial", "unsupported initial condition '" + cfg_.initial + "'");
    }
    return z;
  }

  // control and noise act on the velocity channel only
  void step(StateVector& z, std::span<const double> phi, const NoiseIncrement& dw) const override {
    auto y = z.channel(0);
    auto v = z.channel(1);
    const auto noise = dw.channel(0);
    const int n = grid_.points[0] - 2;
    const double dt = cfg_.dt;
    const double sigma = cfg_.noise_scale();
    Eigen::Map<const Eigen::VectorXd> yi(y.data() + 1, n);
    Eigen::VectorXd rhs = -dt * (a0_ * yi);
    for (int i = 0; i < n; ++i) rhs[i] += v[i + 1] + dt * phi[i + 1] + sigma * noise[i + 1];
    std::vector<double> sol(rhs.data(), rhs.data() + n);
    solver_.solve_in_place(sol);
    for (int i = 0; i < n; ++i) {
      v[i + 1] = sol[i];
      y[i + 1] += dt * sol[i];
    }
    y[0] = y[n + 1] = 0.0;
    v[0] = v[n + 1] = 0.0;
    check_finite(z);
  }

 private:
  SpMat a0_;
  SparseSolver solver_;
};

StateVector step_with(const System& sys, const StateVector& state, const Field& control, const NoiseIncrement& dw) {
  if (!(state.grid() == sys.grid()) || state.channels() != sys.state_channels())
    throw std::invalid_argument("state does not match system layout");
  if (!(control.grid() == sys.grid())) throw std::invalid_argument("control field does not match system grid");
  StateVector next = state;
  sys.step(next, control.values(), dw);
  return next;
}

}  // namespace

std::unique_ptr<System> make_system(const SystemConfig& cfg) {
  switch (cfg.id) {
    case SystemId::kHeat1d: return std::make_unique<Heat1d>(cfg);
    case SystemId::kBurgers1d: return std::make_unique<Burgers1d>(cfg);
    case SystemId::kNagumo1d: return std::make_unique<Nagumo1d>(cfg);
    case SystemId::kEulerBernoulli1d: return std::make_unique<EulerBernoulli1d>(cfg);
    case SystemId::kHeat2d: return std::make_unique<Heat2d>(cfg);
    case SystemId::kSoftLimb2d: return std::make_unique<SoftLimb>(cfg);
  }
  throw ConfigError("system", "unknown system");
}

namespace {
SystemConfig with_id(SystemConfig cfg, SystemId id) {
  cfg.id = id;
  return cfg;
}
}  // namespace

StateVector step_heat_1d(const StateVector& s, const Field& c, const NoiseIncrement& dw, const SystemConfig& cfg) {
  return step_with(Heat1d(with_id(cfg, SystemId::kHeat1d)), s, c, dw);
}
StateVector step_burgers_1d(const StateVector& s, const Field& c, const NoiseIncrement& dw, const SystemConfig& cfg) {
  return step_with(Burgers1d(with_id(cfg, SystemId::kBurgers1d)), s, c, dw);
}
StateVector step_nagumo_1d(const StateVector& s, const Field& c, const NoiseIncrement& dw, const SystemConfig& cfg) {
  return step_with(Nagumo1d(with_id(cfg, SystemId::kNagumo1d)), s, c, dw);
}
StateVector step_euler_bernoulli_1d(const StateVector& s, const Field& c, const NoiseIncrement& dw,
                                    const SystemConfig& cfg) {
  return step_with(EulerBernoulli1d(with_id(cfg, SystemId::kEulerBernoulli1d)), s, c, dw);
}
StateVector step_heat_2d(const StateVector& s, const Field& c, const NoiseIncrement& dw, const SystemConfig& cfg) {
  return step_with(Heat2d(with_id(cfg, SystemId::kHeat2d)), s, c, dw);
}

}  // namespace stso
