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

#include "stso/grid.hpp"
#include "stso/random.hpp"

namespace stso {

/// Placement and width variables of N Gaussian actuators. Coordinates are
/// stored actuator-major: entry i * dim + axis.
struct ActuatorDesign {
  int dim = 1;
  int count = 0;
  std::vector<double> virtual_positions;  // continuous v
  std::vector<double> positions;          // snapped x_p, always on grid nodes
  std::vector<double> widths;             // sigma_mu

  bool operator==(const ActuatorDesign&) const = default;
};

/// Actuator footprints m_i evaluated at every node, one row per actuator.
struct InfluenceMatrix {
  Grid grid;
  int count = 0;
  std::vector<double> rows;  // count * node_count

  std::span<const double> row(int i) const { return {rows.data() + i * grid.node_count(), grid.node_count()}; }
};

/// Nearest node coordinate per axis after clamping into the domain; ties round up.
std::vector<double> snap_to_grid(std::span<const double> v, const Grid& grid);
double snap_coordinate(double v, const Grid& grid, int axis);

/// Builds a design with v = positions, snapping them onto the grid.
ActuatorDesign make_design(const Grid& grid, std::vector<double> positions, std::vector<double> widths);
/// Uniform placement in the box [lo, hi] per axis, constant initial width.
ActuatorDesign random_design(const Grid& grid, int count, std::span<const double> lo, std::span<const double> hi,
                             double width, RandomStream& rng);

InfluenceMatrix influence(const ActuatorDesign& design, const Grid& grid);

/// Actuation field sum_i u_i m_i.
Field apply(const InfluenceMatrix& m, std::span<const double> u);
void apply(const InfluenceMatrix& m, std::span<const double> u, std::span<double> out);

/// d loss / d x_p given d loss / d m (count * node_count), through the
/// Gaussian closed form at the snapped positions. Result is count * dim.
std::vector<double> placement_gradient(std::span<const double> dloss_dm, const ActuatorDesign& design, const Grid& grid);
/// d loss / d sigma_mu, one entry per actuator.
std::vector<double> width_gradient(std::span<const double> dloss_dm, const ActuatorDesign& design, const Grid& grid);

/// Adds `delta` to the virtual positions, clamps them into the domain and
/// re-snaps the applied positions.
void move_virtual_positions(ActuatorDesign& design, std::span<const double> delta, const Grid& grid);
/// Rounds after every update without a virtual variable; small moves are lost.
void move_snapped_positions(ActuatorDesign& design, std::span<const double> delta, const Grid& grid);
/// Adds `delta` to the widths and clips them below at half the smallest spacing.
void move_widths(ActuatorDesign& design, std::span<const double> delta, const Grid& grid);
double min_width(const Grid& grid);

}  // namespace stso
