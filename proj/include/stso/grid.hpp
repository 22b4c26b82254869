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
#include <span>
#include <vector>

namespace stso {

/// Uniform node-centred grid on [0, extent] (1D) or [0, w] x [0, h] (2D).
/// Nodes are ordered with the x index fastest.
struct Grid {
  int dim = 1;
  std::array<double, 2> extent{1.0, 0.0};
  std::array<int, 2> points{3, 1};
  std::array<double, 2> spacing{0.5, 0.0};

  std::size_t node_count() const noexcept {
    return static_cast<std::size_t>(points[0]) * static_cast<std::size_t>(dim == 2 ? points[1] : 1);
  }
  double cell_volume() const noexcept { return dim == 2 ? spacing[0] * spacing[1] : spacing[0]; }

  std::size_t index(int ix, int iy = 0) const noexcept {
    return static_cast<std::size_t>(ix) + static_cast<std::size_t>(iy) * static_cast<std::size_t>(points[0]);
  }
  int ix(std::size_t node) const noexcept { return static_cast<int>(node % static_cast<std::size_t>(points[0])); }
  int iy(std::size_t node) const noexcept { return static_cast<int>(node / static_cast<std::size_t>(points[0])); }

  double coordinate(std::size_t node, int axis) const noexcept {
    return axis == 0 ? ix(node) * spacing[0] : iy(node) * spacing[1];
  }
  bool on_boundary(std::size_t node) const noexcept;

  /// Trapezoid quadrature weight of a node: cell volume, halved once per axis
  /// on which the node sits at an end.
  double weight(std::size_t node) const noexcept;

  bool operator==(const Grid&) const = default;
};

Grid make_grid(int dim, std::span<const double> extents, std::span<const int> points_per_axis);
Grid make_grid(int dim, std::span<const double> extents, int points_per_axis);
Grid make_grid_1d(double extent, int points);
Grid make_grid_2d(double width, double height, int points_x, int points_y);

/// Scalar nodal values on a grid.
class Field {
 public:
  explicit Field(Grid grid);
  Field(Grid grid, std::vector<double> values);

  const Grid& grid() const noexcept { return grid_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  Grid grid_;
  std::vector<double> values_;
};

/// Several fields on one grid stored channel-major, e.g. (y, v) for a beam.
class StateVector {
 public:
  StateVector() = default;
  StateVector(Grid grid, int channels);

  const Grid& grid() const noexcept { return grid_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> channel(int c) noexcept { return {data_.data() + c * grid_.node_count(), grid_.node_count()}; }
  std::span<const double> channel(int c) const noexcept {
    return {data_.data() + c * grid_.node_count(), grid_.node_count()};
  }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  Field field(int c) const;

  bool all_finite() const noexcept;
  bool operator==(const StateVector&) const = default;

 private:
  Grid grid_;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Per-channel Gaussian increments of a cylindrical Wiener process.
using NoiseIncrement = StateVector;

/// Discrete L2 product with trapezoid weights.
double inner_product(const Field& f, const Field& g);
double inner_product(const Grid& grid, std::span<const double> f, std::span<const double> g);
/// Sum of per-channel products for multi-channel data laid out like StateVector.
double inner_product_channels(const Grid& grid, std::span<const double> f, std::span<const double> g);

Field one_hot_basis(const Grid& grid, std::size_t node_index);

}  // namespace stso
