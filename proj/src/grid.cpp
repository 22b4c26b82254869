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

#include "stso/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stso {

bool Grid::on_boundary(std::size_t node) const noexcept {
  const int i = ix(node);
  if (i == 0 || i == points[0] - 1) return true;
  if (dim == 2) {
    const int j = iy(node);
    return j == 0 || j == points[1] - 1;
  }
  return false;
}

double Grid::weight(std::size_t node) const noexcept {
  double w = cell_volume();
  const int i = ix(node);
  if (i == 0 || i == points[0] - 1) w *= 0.5;
  if (dim == 2) {
    const int j = iy(node);
    if (j == 0 || j == points[1] - 1) w *= 0.5;
  }
  return w;
}

Grid make_grid(int dim, std::span<const double> extents, std::span<const int> points_per_axis) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("grid dimension must be 1 or 2");
  if (extents.size() < static_cast<std::size_t>(dim) || points_per_axis.size() < static_cast<std::size_t>(dim))
    throw std::invalid_argument("grid needs one extent and one point count per axis");
  Grid g;
  g.dim = dim;
  g.points = {1, 1};
  g.extent = {0.0, 0.0};
  g.spacing = {0.0, 0.0};
  for (int a = 0; a < dim; ++a) {
    if (points_per_axis[a] < 3)
      throw std::invalid_argument("grid needs at least 3 points per axis, got " + std::to_string(points_per_axis[a]));
    if (!(extents[a] > 0.0) || !std::isfinite(extents[a]))
      throw std::invalid_argument("grid extent must be positive and finite");
    g.points[a] = points_per_axis[a];
    g.extent[a] = extents[a];
    g.spacing[a] = extents[a] / (points_per_axis[a] - 1);
  }
  return g;
}

Grid make_grid(int dim, std::span<const double> extents, int points_per_axis) {
  const std::array<int, 2> pts{points_per_axis, points_per_axis};
  return make_grid(dim, extents, std::span<const int>(pts.data(), static_cast<std::size_t>(dim)));
}

Grid make_grid_1d(double extent, int points) {
  const std::array<double, 1> e{extent};
  const std::array<int, 1> p{points};
  return make_grid(1, e, p);
}

Grid make_grid_2d(double width, double height, int points_x, int points_y) {
  const std::array<double, 2> e{width, height};
  const std::array<int, 2> p{points_x, points_y};
  return make_grid(2, e, p);
}

Field::Field(Grid grid) : grid_(grid), values_(grid.node_count(), 0.0) {}

Field::Field(Grid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.node_count()) throw std::invalid_argument("field size does not match grid");
  for (double v : values_)
    if (!std::isfinite(v)) throw std::invalid_argument("field values must be finite");
}

StateVector::StateVector(Grid grid, int channels)
    : grid_(grid), channels_(channels), data_(grid.node_count() * static_cast<std::size_t>(channels), 0.0) {
  if (channels < 1) throw std::invalid_argument("state needs at least one channel");
}

Field StateVector::field(int c) const {
  auto ch = channel(c);
  return Field(grid_, std::vector<double>(ch.begin(), ch.end()));
}

bool StateVector::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double inner_product(const Grid& grid, std::span<const double> f, std::span<const double> g) {
  const std::size_t n = grid.node_count();
  if (f.size() != n || g.size() != n) throw std::invalid_argument("inner product operands do not match grid");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += grid.weight(i) * f[i] * g[i];
  return acc;
}

double inner_product(const Field& f, const Field& g) {
  if (!(f.grid() == g.grid())) throw std::invalid_argument("inner product of fields on different grids");
  return inner_product(f.grid(), f.values(), g.values());
}

double inner_product_channels(const Grid& grid, std::span<const double> f, std::span<const double> g) {
  const std::size_t n = grid.node_count();
  if (f.size() != g.size() || f.size() % n != 0) throw std::invalid_argument("channel data does not match grid");
  double acc = 0.0;
  for (std::size_t c = 0; c < f.size() / n; ++c) acc += inner_product(grid, f.subspan(c * n, n), g.subspan(c * n, n));
  return acc;
}

Field one_hot_basis(const Grid& grid, std::size_t node_index) {
  if (node_index >= grid.node_count()) throw std::out_of_range("basis index outside grid");
  Field e(grid);
  e[node_index] = 1.0;
  return e;
}

}  // namespace stso
