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

#include <span>
#include <vector>

#include "stso/actuation.hpp"
#include "stso/systems.hpp"

namespace stso {

/// Rectangular particle lattice with rest spacing `spacing` in both axes.
/// Particle (i, j) rests at (i * spacing, j * spacing); index i + j * nx.
struct Lattice {
  int nx = 9;
  int ny = 3;
  double spacing = 1.0;

  int count() const noexcept { return nx * ny; }
};

struct Material {
  double tensile = 100.0;       // k
  double shear_modulus = 50.0;  // mu_s
  double retardation = 0.05;    // tau, damping tensor = tau * stiffness tensor
};

/// Force density div(sigma) of elastic plus Kelvin-Voigt stress. `d`, `v`
/// and `force` hold the x channel followed by the y channel (2 * count).
/// Strain is Green's tensor built from finite-difference tangents; the
/// boundary is traction free.
void lattice_stress_force(const Lattice& lat, const Material& mat, std::span<const double> d,
                          std::span<const double> v, std::span<double> force);

/// Linearized force density from rest-length actuation: a per-particle
/// level a shortens adjacent horizontal members by gain * a and lengthens
/// vertical members by the same fraction. Only the elastic stress sees the
/// rest length, so the force depends on displacements, not velocities.
/// Exactly linear in a; rows of clamped particles (first column) are zero.
void lattice_actuation_force(const Lattice& lat, const Material& mat, double gain, std::span<const double> d,
                             std::span<const double> v, std::span<const double> a, std::span<double> force);
/// Transpose of lattice_actuation_force in a.
void lattice_actuation_adjoint(const Lattice& lat, const Material& mat, double gain, std::span<const double> d,
                               std::span<const double> v, std::span<const double> y, std::span<double> out);

/// Continuum spring-mass limb on a 2D particle lattice, state (d_x, d_y, v_x, v_y),
/// integrated with explicit Euler. The first column is clamped.
class SoftLimb final : public System {
 public:
  explicit SoftLimb(SystemConfig cfg);

  int state_channels() const override { return 4; }
  int noise_channels() const override { return 2; }
  std::vector<std::string> channel_names() const override { return {"d_x", "d_y", "v_x", "v_y"}; }
  bool state_dependent_control() const override { return true; }

  StateVector initial_state(RandomStream& rng) const override;
  void control_field(const StateVector& z, std::span<const double> a, std::span<double> phi) const override;
  void control_adjoint(const StateVector& z, std::span<const double> y, std::span<double> out) const override;
  void step(StateVector& z, std::span<const double> phi, const NoiseIncrement& dw) const override;

  const Lattice& lattice() const noexcept { return lattice_; }
  const Material& material() const noexcept { return material_; }

 private:
  Lattice lattice_;
  Material material_;
};

/// One soft-limb step from per-actuator commands.
StateVector step_softlimb_2d(const StateVector& state, std::span<const double> controls, const InfluenceMatrix& influence,
                             const NoiseIncrement& dw, const SystemConfig& cfg);

}  // namespace stso
