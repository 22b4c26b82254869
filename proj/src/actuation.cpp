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

#include "stso/actuation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stso {

double snap_coordinate(double v, const Grid& grid, int axis) {
  const double h = grid.spacing[axis];
  const double clamped = std::clamp(v, 0.0, grid.extent[axis]);
  // round half up; the slack absorbs representation error in exact ties like 0.25 / 0.1
  const double idx = std::floor(clamped / h + 0.5 + 1e-9);
  return std::min(idx, static_cast<double>(grid.points[axis] - 1)) * h;
}

std::vector<double> snap_to_grid(std::span<const double> v, const Grid& grid) {
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = snap_coordinate(v[k], grid, static_cast<int>(k % grid.dim));
  return out;
}

ActuatorDesign make_design(const Grid& grid, std::vector<double> positions, std::vector<double> widths) {
  if (positions.size() != widths.size() * static_cast<std::size_t>(grid.dim))
    throw std::invalid_argument("actuator positions and widths disagree in count");
  for (double w : widths)
    if (!(w > 0.0)) throw std::invalid_argument("actuator widths must be positive");
  ActuatorDesign d;
  d.dim = grid.dim;
  d.count = static_cast<int>(widths.size());
  d.virtual_positions = std::move(positions);
  for (std::size_t k = 0; k < d.virtual_positions.size(); ++k)
    d.virtual_positions[k] = std::clamp(d.virtual_positions[k], 0.0, grid.extent[k % grid.dim]);
  d.positions = snap_to_grid(d.virtual_positions, grid);
  d.widths = std::move(widths);
  return d;
}

ActuatorDesign random_design(const Grid& grid, int count, std::span<const double> lo, std::span<const double> hi,
                             double width, RandomStream& rng) {
  if (lo.size() < static_cast<std::size_t>(grid.dim) || hi.size() < static_cast<std::size_t>(grid.dim))
    throw std::invalid_argument("initial placement box needs one range per axis");
  std::vector<double> pos;
  for (int i = 0; i < count; ++i)
    for (int a = 0; a < grid.dim; ++a) pos.push_back(rng.uniform(lo[a], hi[a]));
  return make_design(grid, std::move(pos), std::vector<double>(static_cast<std::size_t>(count), width));
}

InfluenceMatrix influence(const ActuatorDesign& design, const Grid& grid) {
  if (design.dim != grid.dim) throw std::invalid_argument("design dimension does not match grid");
  const std::size_t n = grid.node_count();
  InfluenceMatrix m{grid, design.count, std::vector<double>(n * static_cast<std::size_t>(design.count))};
  for (int i = 0; i < design.count; ++i) {
    const double s2 = design.widths[i] * design.widths[i];
    for (std::size_t node = 0; node < n; ++node) {
      double r2 = 0.0;
      for (int a = 0; a < grid.dim; ++a) {
        const double dx = grid.coordinate(node, a) - design.positions[i * grid.dim + a];
        r2 += dx * dx;
      }
      m.rows[i * n + node] = std::exp(-r2 / (2.0 * s2));
    }
  }
  return m;
}

void apply(const InfluenceMatrix& m, std::span<const double> u, std::span<double> out) {
  if (u.size() != static_cast<std::size_t>(m.count)) throw std::invalid_argument("control count does not match actuators");
  const std::size_t n = m.grid.node_count();
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  for (int i = 0; i < m.count; ++i) {
    const double ui = u[i];
    const double* row = m.rows.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) out[k] += ui * row[k];
  }
}

Field apply(const InfluenceMatrix& m, std::span<const double> u) {
  Field f(m.grid);
  apply(m, u, f.values());
  return f;
}

std::vector<double> placement_gradient(std::span<const double> dloss_dm, const ActuatorDesign& design, const Grid& grid) {
  const std::size_t n = grid.node_count();
  if (dloss_dm.size() != n * static_cast<std::size_t>(design.count))
    throw std::invalid_argument("upstream partials do not match influence shape");
  const auto m = influence(design, grid);
  std::vector<double> g(static_cast<std::size_t>(design.count * grid.dim), 0.0);
  for (int i = 0; i < design.count; ++i) {
    const double s2 = design.widths[i] * design.widths[i];
    for (std::size_t node = 0; node < n; ++node) {
      const double w = dloss_dm[i * n + node] * m.rows[i * n + node] / s2;
      for (int a = 0; a < grid.dim; ++a)
        g[i * grid.dim + a] += w * (grid.coordinate(node, a) - design.positions[i * grid.dim + a]);
    }
  }
  return g;
}

std::vector<double> width_gradient(std::span<const double> dloss_dm, const ActuatorDesign& design, const Grid& grid) {
  const std::size_t n = grid.node_count();
  if (dloss_dm.size() != n * static_cast<std::size_t>(design.count))
    throw std::invalid_argument("upstream partials do not match influence shape");
  const auto m = influence(design, grid);
  std::vector<double> g(static_cast<std::size_t>(design.count), 0.0);
  for (int i = 0; i < design.count; ++i) {
    const double s3 = design.widths[i] * design.widths[i] * design.widths[i];
    for (std::size_t node = 0; node < n; ++node) {
      double r2 = 0.0;
      for (int a = 0; a < grid.dim; ++a) {
        const double dx = grid.coordinate(node, a) - design.positions[i * grid.dim + a];
        r2 += dx * dx;
      }
      g[i] += dloss_dm[i * n + node] * m.rows[i * n + node] * r2 / s3;
    }
  }
  return g;
}

void move_virtual_positions(ActuatorDesign& design, std::span<const double> delta, const Grid& grid) {
  if (delta.size() != design.virtual_positions.size()) throw std::invalid_argument("placement update has wrong size");
  for (std::size_t k = 0; k < delta.size(); ++k) {
    const int axis = static_cast<int>(k % grid.dim);
    design.virtual_positions[k] = std::clamp(design.virtual_positions[k] + delta[k], 0.0, grid.extent[axis]);
  }
  design.positions = snap_to_grid(design.virtual_positions, grid);
}

void move_snapped_positions(ActuatorDesign& design, std::span<const double> delta, const Grid& grid) {
  if (delta.size() != design.positions.size()) throw std::invalid_argument("placement update has wrong size");
  for (std::size_t k = 0; k < delta.size(); ++k)
    design.positions[k] = snap_coordinate(design.positions[k] + delta[k], grid, static_cast<int>(k % grid.dim));
  design.virtual_positions = design.positions;
}

double min_width(const Grid& grid) {
  double h = grid.spacing[0];
  if (grid.dim == 2) h = std::min(h, grid.spacing[1]);
  return 0.5 * h;
}

void move_widths(ActuatorDesign& design, std::span<const double> delta, const Grid& grid) {
  if (delta.size() != design.widths.size()) throw std::invalid_argument("width update has wrong size");
  const double lo = min_width(grid);
  for (std::size_t k = 0; k < delta.size(); ++k) design.widths[k] = std::max(design.widths[k] + delta[k], lo);
}

}  // namespace stso
