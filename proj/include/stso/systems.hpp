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
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stso/grid.hpp"
#include "stso/random.hpp"

namespace stso {

enum class SystemId { kHeat1d, kBurgers1d, kNagumo1d, kEulerBernoulli1d, kHeat2d, kSoftLimb2d };

std::string to_string(SystemId id);
SystemId system_id_from_string(const std::string& name);

/// Physical and numerical parameters of one experimental system.
struct SystemConfig {
  SystemId id = SystemId::kHeat1d;

  std::array<double, 2> extent{1.0, 1.0};
  std::array<int, 2> points{64, 1};

  double dt = 0.01;
  double horizon = 1.0;
  /// Noise/control weighting; noise enters as dW / sqrt(rho). +inf disables noise.
  double rho = 1.0;

  double epsilon = 1.0;          // diffusivity (heat, Nagumo) or viscosity (Burgers)
  double alpha = -0.5;           // Nagumo wave-speed parameter
  double boundary_value = 1.0;   // Burgers Dirichlet value
  double kelvin_voigt = 1e-3;    // Euler-Bernoulli C_d
  double viscous_damping = 0.0;  // Euler-Bernoulli mu

  double density = 1.0;          // soft limb rho_m
  double tensile = 100.0;        // soft limb k
  double shear_modulus = 50.0;   // soft limb mu_s
  double retardation = 0.05;     // soft limb tau
  double gravity = 0.0981;       // soft limb base gravity
  double gravity_scale = 100.0;  // exaggeration factor on gravity
  double actuation_gain = 0.1;   // soft limb rest-length change per unit control

  /// Initial condition selector: "zero", "sine", "random", "nagumo_front", "rest".
  std::string initial = "zero";
  double initial_amplitude = 1.0;
  int initial_mode = 1;

  int steps() const;
  Grid grid() const;
  double noise_scale() const;
  void validate() const;
};

/// Default parameters for each system (the values shipped in configs/).
SystemConfig default_system_config(SystemId id);

/// A spatially discretized SPDE. Control and noise enter through the same
/// channels: next = step(z, phi, dW) with phi a control field on the noise
/// channels. phi is obtained from a scalar actuation field a(x) by
/// control_field(), which is linear in a and zero on pinned boundary nodes.
class System {
 public:
  explicit System(SystemConfig cfg);
  virtual ~System() = default;

  const SystemConfig& config() const noexcept { return cfg_; }
  const Grid& grid() const noexcept { return grid_; }
  std::size_t state_size() const noexcept { return grid_.node_count() * static_cast<std::size_t>(state_channels()); }
  std::size_t noise_size() const noexcept { return grid_.node_count() * static_cast<std::size_t>(noise_channels()); }

  virtual int state_channels() const = 0;
  virtual int noise_channels() const { return 1; }
  virtual std::vector<std::string> channel_names() const = 0;

  virtual StateVector initial_state(RandomStream& rng) const = 0;

  /// Linear map from actuation field a (node_count) to control field phi (noise_size).
  virtual void control_field(const StateVector& z, std::span<const double> a, std::span<double> phi) const;
  /// Plain transpose of control_field at the same state.
  virtual void control_adjoint(const StateVector& z, std::span<const double> y, std::span<double> out) const;
  virtual bool state_dependent_control() const { return false; }
  /// Boundary nodes are fixed by the boundary condition; control there is dropped.
  virtual bool pinned_boundary() const { return false; }

  /// Advance one step in place. Throws DivergedRollout on non-finite output.
  virtual void step(StateVector& z, std::span<const double> phi, const NoiseIncrement& dw) const = 0;

 protected:
  void check_finite(const StateVector& z) const;

  SystemConfig cfg_;
  Grid grid_;
};

std::unique_ptr<System> make_system(const SystemConfig& cfg);

// Single-step entry points. Each builds the stepper from cfg; rollouts use System directly.
StateVector step_heat_1d(const StateVector& state, const Field& control, const NoiseIncrement& dw, const SystemConfig& cfg);
StateVector step_burgers_1d(const StateVector& state, const Field& control, const NoiseIncrement& dw,
                            const SystemConfig& cfg);
StateVector step_nagumo_1d(const StateVector& state, const Field& control, const NoiseIncrement& dw,
                           const SystemConfig& cfg);
StateVector step_euler_bernoulli_1d(const StateVector& state, const Field& control, const NoiseIncrement& dw,
                                    const SystemConfig& cfg);
StateVector step_heat_2d(const StateVector& state, const Field& control, const NoiseIncrement& dw, const SystemConfig& cfg);

}  // namespace stso
