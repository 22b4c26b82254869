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

#include "stso/softlimb.hpp"

#include <cmath>
#include <stdexcept>

#include "stso/error.hpp"

namespace stso {
namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

/// Positions, velocities and finite-difference tangents of every particle.
struct Kinematics {
  std::vector<Vec2> pos, vel, tx, ty, tx_rate, ty_rate;
};

Kinematics kinematics(const Lattice& lat, std::span<const double> d, std::span<const double> v) {
  const int n = lat.count();
  if (d.size() != 2u * n || v.size() != 2u * n) throw std::invalid_argument("lattice state has wrong size");
  Kinematics k;
  k.pos.resize(n);
  k.vel.resize(n);
  for (int p = 0; p < n; ++p) {
    const int i = p % lat.nx;
    const int j = p / lat.nx;
    k.pos[p] = {i * lat.spacing + d[p], j * lat.spacing + d[n + p]};
    k.vel[p] = {v[p], v[n + p]};
  }
  const auto tangent = [&](const std::vector<Vec2>& f, int i, int j, bool along_x, Vec2 rest) -> Vec2 {
    const int len = along_x ? lat.nx : lat.ny;
    const int idx = along_x ? i : j;
    const auto at = [&](int m) { return along_x ? f[m + j * lat.nx] : f[i + m * lat.nx]; };
    if (len == 1) return rest;
    if (idx == 0) return (1.0 / lat.spacing) * (at(1) - at(0));
    if (idx == len - 1) return (1.0 / lat.spacing) * (at(len - 1) - at(len - 2));
    return (0.5 / lat.spacing) * (at(idx + 1) - at(idx - 1));
  };
  k.tx.resize(n);
  k.ty.resize(n);
  k.tx_rate.resize(n);
  k.ty_rate.resize(n);
  for (int p = 0; p < n; ++p) {
    const int i = p % lat.nx;
    const int j = p / lat.nx;
    k.tx[p] = tangent(k.pos, i, j, true, {1.0, 0.0});
    k.ty[p] = tangent(k.pos, i, j, false, {0.0, 1.0});
    k.tx_rate[p] = tangent(k.vel, i, j, true, {0.0, 0.0});
    k.ty_rate[p] = tangent(k.vel, i, j, false, {0.0, 0.0});
  }
  return k;
}

/// Control-volume length of particle index `idx` along an axis with `len` particles.
inline double cell_length(int idx, int len, double spacing) {
  return (idx == 0 || idx == len - 1) ? 0.5 * spacing : spacing;
}

/// Visits every member. `horizontal` is true for members along x.
template <typename Fn>
void for_each_member(const Lattice& lat, Fn&& fn) {
  for (int j = 0; j < lat.ny; ++j)
    for (int i = 0; i + 1 < lat.nx; ++i) fn(i + j * lat.nx, i + 1 + j * lat.nx, true, i, i + 1, lat.nx);
  for (int j = 0; j + 1 < lat.ny; ++j)
    for (int i = 0; i < lat.nx; ++i) fn(i + j * lat.nx, i + (j + 1) * lat.nx, false, j, j + 1, lat.ny);
}

/// d(axial flux)/d(actuation level) of one member.
Vec2 actuation_sensitivity(const Kinematics& k, const Material& mat, double gain, double spacing, int p, int q,
                           bool horizontal) {
  const Vec2 delta = k.pos[q] - k.pos[p];
  const double r = 1.0 / spacing;
  // elastic flux k (|D|^2 r^2 - 1) r D with r the inverse rest length; the
  // rest length does not enter the damping term
  const double dflux_dr = mat.tensile * (3.0 * dot(delta, delta) * r * r - 1.0);
  const double dr_da = (horizontal ? gain : -gain) / spacing;
  return (dflux_dr * dr_da) * delta;
}

}  // namespace

void lattice_stress_force(const Lattice& lat, const Material& mat, std::span<const double> d,
                          std::span<const double> v, std::span<double> force) {
  const int n = lat.count();
  const auto k = kinematics(lat, d, v);
  if (force.size() != 2u * n) throw std::invalid_argument("force buffer has wrong size");
  std::fill(force.begin(), force.end(), 0.0);
  const double l = lat.spacing;
  for_each_member(lat, [&](int p, int q, bool horizontal, int ip, int iq, int len) {
    const Vec2 axial = (1.0 / l) * (k.pos[q] - k.pos[p]);
    const Vec2 axial_rate = (1.0 / l) * (k.vel[q] - k.vel[p]);
    const Vec2 cross = 0.5 * ((horizontal ? k.ty[p] : k.tx[p]) + (horizontal ? k.ty[q] : k.tx[q]));
    const Vec2 cross_rate = 0.5 * ((horizontal ? k.ty_rate[p] : k.tx_rate[p]) + (horizontal ? k.ty_rate[q] : k.tx_rate[q]));
    const double normal_strain = dot(axial, axial) - 1.0;
    const double normal_rate = 2.0 * dot(axial, axial_rate);
    const double shear_strain = 0.5 * dot(axial, cross);
    const double shear_rate = 0.5 * (dot(axial_rate, cross) + dot(axial, cross_rate));
    const double s_normal = mat.tensile * (normal_strain + mat.retardation * normal_rate);
    const double s_shear = mat.shear_modulus * (shear_strain + mat.retardation * shear_rate);
    const Vec2 flux = s_normal * axial + s_shear * cross;
    const double hp = cell_length(ip, len, l);
    const double hq = cell_length(iq, len, l);
    force[p] += flux.x / hp;
    force[n + p] += flux.y / hp;
    force[q] -= flux.x / hq;
    force[n + q] -= flux.y / hq;
  });
}

void lattice_actuation_force(const Lattice& lat, const Material& mat, double gain, std::span<const double> d,
                             std::span<const double> v, std::span<const double> a, std::span<double> force) {
  const int n = lat.count();
  if (a.size() != static_cast<std::size_t>(n) || force.size() != 2u * n)
    throw std::invalid_argument("actuation buffers have wrong size");
  const auto k = kinematics(lat, d, v);
  std::fill(force.begin(), force.end(), 0.0);
  const double l = lat.spacing;
  for_each_member(lat, [&](int p, int q, bool horizontal, int ip, int iq, int len) {
    const Vec2 g = actuation_sensitivity(k, mat, gain, l, p, q, horizontal);
    const double level = 0.5 * (a[p] + a[q]);
    if (p % lat.nx != 0) {
      const double hp = cell_length(ip, len, l);
      force[p] += level * g.x / hp;
      force[n + p] += level * g.y / hp;
    }
    if (q % lat.nx != 0) {
      const double hq = cell_length(iq, len, l);
      force[q] -= level * g.x / hq;
      force[n + q] -= level * g.y / hq;
    }
  });
}

void lattice_actuation_adjoint(const Lattice& lat, const Material& mat, double gain, std::span<const double> d,
                               std::span<const double> v, std::span<const double> y, std::span<double> out) {
  const int n = lat.count();
  if (out.size() != static_cast<std::size_t>(n) || y.size() != 2u * n)
    throw std::invalid_argument("actuation buffers have wrong size");
  const auto k = kinematics(lat, d, v);
  std::fill(out.begin(), out.end(), 0.0);
  const double l = lat.spacing;
  for_each_member(lat, [&](int p, int q, bool horizontal, int ip, int iq, int len) {
    const Vec2 g = actuation_sensitivity(k, mat, gain, l, p, q, horizontal);
    double s = 0.0;
    if (p % lat.nx != 0) s += (g.x * y[p] + g.y * y[n + p]) / cell_length(ip, len, l);
    if (q % lat.nx != 0) s -= (g.x * y[q] + g.y * y[n + q]) / cell_length(iq, len, l);
    out[p] += 0.5 * s;
    out[q] += 0.5 * s;
  });
}

SoftLimb::SoftLimb(SystemConfig cfg) : System(std::move(cfg)) {
  lattice_ = {grid_.points[0], grid_.points[1], grid_.spacing[0]};
  if (std::abs(grid_.spacing[0] - grid_.spacing[1]) > 1e-12 * grid_.spacing[0])
    throw ConfigError("grid", "soft limb lattice needs equal spacing on both axes");
  material_ = {cfg_.tensile, cfg_.shear_modulus, cfg_.retardation};
}

StateVector SoftLimb::initial_state(RandomStream&) const {
  if (cfg_.initial != "rest" && cfg_.initial != "zero")
    throw ConfigError("physics.initial", "soft limb starts at rest");
  return StateVector(grid_, 4);
}

void SoftLimb::control_field(const StateVector& z, std::span<const double> a, std::span<double> phi) const {
  const std::size_t n = grid_.node_count();
  lattice_actuation_force(lattice_, material_, cfg_.actuation_gain, z.data().subspan(0, 2 * n),
                          z.data().subspan(2 * n, 2 * n), a, phi);
}

void SoftLimb::control_adjoint(const StateVector& z, std::span<const double> y, std::span<double> out) const {
  const std::size_t n = grid_.node_count();
  lattice_actuation_adjoint(lattice_, material_, cfg_.actuation_gain, z.data().subspan(0, 2 * n),
                            z.data().subspan(2 * n, 2 * n), y, out);
}

void SoftLimb::step(StateVector& z, std::span<const double> phi, const NoiseIncrement& dw) const {
  const std::size_t n = grid_.node_count();
  thread_local std::vector<double> force;
  force.resize(2 * n);
  auto data = z.data();
  lattice_stress_force(lattice_, material_, data.subspan(0, 2 * n), data.subspan(2 * n, 2 * n), force);
  const double dt = cfg_.dt;
  const double sigma = cfg_.noise_scale();
  const double weight = -cfg_.density * cfg_.gravity * cfg_.gravity_scale;
  const auto noise = dw.data();
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t di = c * n + p;
      const std::size_t vi = (2 + c) * n + p;
      const double f = force[di] + (c == 1 ? weight : 0.0) + phi[di];
      const double v_old = data[vi];
      data[vi] += (dt * f + sigma * noise[di]) / cfg_.density;
      data[di] += dt * v_old;
    }
  }
  for (int j = 0; j < lattice_.ny; ++j) {
    const std::size_t p = static_cast<std::size_t>(j * lattice_.nx);
    for (int c = 0; c < 4; ++c) data[c * n + p] = 0.0;
  }
  check_finite(z);
}

StateVector step_softlimb_2d(const StateVector& state, std::span<const double> controls, const InfluenceMatrix& influence,
                             const NoiseIncrement& dw, const SystemConfig& cfg) {
  SystemConfig c = cfg;
  c.id = SystemId::kSoftLimb2d;
  SoftLimb limb(c);
  const auto a = apply(influence, controls);
  std::vector<double> phi(limb.noise_size());
  limb.control_field(state, a.values(), phi);
  StateVector next = state;
  limb.step(next, phi, dw);
  return next;
}

}  // namespace stso
