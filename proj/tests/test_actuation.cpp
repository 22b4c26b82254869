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

#include <doctest.h>

#include <cmath>

#include "stso/actuation.hpp"
#include "support.hpp"

using namespace stso;

namespace {

Grid random_grid(test::Gen& gen) {
  if (gen.integer(0, 1) == 0) return make_grid_1d(gen.real(0.5, 20.0), gen.integer(3, 70));
  return make_grid_2d(gen.real(0.5, 8.0), gen.real(0.5, 8.0), gen.integer(3, 20), gen.integer(3, 20));
}

}  // namespace

TEST_CASE("snapping is idempotent, lands on nodes and stays within half a spacing") {
  test::Gen gen(31);
  for (int trial = 0; trial < 200; ++trial) {
    const Grid g = random_grid(gen);
    std::vector<double> v(g.dim);
    for (int a = 0; a < g.dim; ++a) v[a] = gen.real(0.0, g.extent[a]);
    const auto s = snap_to_grid(v, g);
    CHECK(snap_to_grid(s, g) == s);
    for (int a = 0; a < g.dim; ++a) {
      CHECK(std::abs(s[a] - v[a]) <= 0.5 * g.spacing[a] * (1.0 + 1e-9));
      const double idx = s[a] / g.spacing[a];
      CHECK(std::abs(idx - std::round(idx)) < 1e-9);
    }
  }
}

TEST_CASE("snapping rounds ties up and clamps into the domain") {
  const Grid g = make_grid_1d(1.0, 11);
  CHECK(snap_coordinate(0.25, g, 0) == doctest::Approx(0.3));
  CHECK(snap_coordinate(0.05, g, 0) == doctest::Approx(0.1));
  CHECK(snap_coordinate(0.249, g, 0) == doctest::Approx(0.2));
  CHECK(snap_coordinate(-3.0, g, 0) == 0.0);
  CHECK(snap_coordinate(7.0, g, 0) == doctest::Approx(1.0));
  CHECK(snap_coordinate(0.95, g, 0) == doctest::Approx(1.0));
}

TEST_CASE("virtual positions cross a node after the exact number of sub-rounding steps") {
  test::Gen gen(32);
  for (int trial = 0; trial < 200; ++trial) {
    const int points = gen.integer(5, 40);
    const Grid g = make_grid_1d(gen.real(0.5, 5.0), points);
    const double dx = g.spacing[0];
    const int start = gen.integer(1, points - 3);
    const double step = gen.real(0.02, 0.49) * dx;
    auto d = make_design(g, {start * dx}, {0.1});
    const double before = d.positions[0];
    const long expected = static_cast<long>(std::ceil(dx / (2.0 * step)));
    long iterations = 0;
    while (d.positions[0] == before && iterations < 1000) {
      move_virtual_positions(d, std::vector<double>{step}, g);
      ++iterations;
    }
    CHECK(iterations == expected);
    CHECK(d.positions[0] == doctest::Approx(before + dx));
  }
}

TEST_CASE("virtual crossing count at exact ties") {
  const Grid g = make_grid_1d(1.0, 11);
  auto d = make_design(g, {0.5}, {0.1});
  int iterations = 0;
  while (d.positions[0] == doctest::Approx(0.5) && iterations < 100) {
    move_virtual_positions(d, std::vector<double>{0.01}, g);
    ++iterations;
  }
  CHECK(iterations == 5);
}

TEST_CASE("snapped-only updates lose sub-rounding moves") {
  const Grid g = make_grid_1d(1.0, 11);
  auto d = make_design(g, {0.5}, {0.1});
  for (int k = 0; k < 100; ++k) move_snapped_positions(d, std::vector<double>{0.04}, g);
  CHECK(d.positions[0] == doctest::Approx(0.5));
  CHECK(d.virtual_positions == d.positions);
}

TEST_CASE("widths are clipped at half the smallest spacing") {
  const Grid g = make_grid_2d(1.0, 2.0, 11, 5);
  CHECK(min_width(g) == doctest::Approx(0.05));
  auto d = make_design(g, {0.5, 1.0}, {0.2});
  move_widths(d, std::vector<double>{-1.0}, g);
  CHECK(d.widths[0] == doctest::Approx(0.05));
  move_widths(d, std::vector<double>{0.3}, g);
  CHECK(d.widths[0] == doctest::Approx(0.35));
  CHECK_THROWS(make_design(g, {0.5}, {0.2}));
  CHECK_THROWS(make_design(g, {0.5, 0.5}, {0.0}));
}

TEST_CASE("random designs are snapped and inside the sampling box") {
  const Grid g = make_grid_2d(1.0, 1.0, 9, 9);
  RandomStream rng({7, StreamPurpose::kActuatorInit});
  const std::vector<double> lo{0.2, 0.3}, hi{0.6, 0.9};
  const auto d = random_design(g, 6, lo, hi, 0.1, rng);
  CHECK(d.count == 6);
  CHECK(d.positions == snap_to_grid(d.virtual_positions, g));
  for (int i = 0; i < d.count; ++i)
    for (int a = 0; a < 2; ++a) {
      CHECK(d.virtual_positions[i * 2 + a] >= lo[a]);
      CHECK(d.virtual_positions[i * 2 + a] <= hi[a]);
    }
}

TEST_CASE("influence rows are gaussians centred on the snapped positions") {
  const Grid g = make_grid_1d(1.0, 21);
  const auto d = make_design(g, {0.31, 0.74}, {0.1, 0.2});
  const auto m = influence(d, g);
  for (int i = 0; i < 2; ++i)
    for (std::size_t node = 0; node < g.node_count(); ++node) {
      const double r = g.coordinate(node, 0) - d.positions[i];
      CHECK(m.row(i)[node] == doctest::Approx(std::exp(-r * r / (2 * d.widths[i] * d.widths[i]))).epsilon(1e-15));
    }
  CHECK(m.row(0)[6] == 1.0);
  const std::vector<double> u{2.0, -1.0};
  const Field a = stso::apply(m, u);
  for (std::size_t node = 0; node < g.node_count(); ++node)
    CHECK(a[node] == doctest::Approx(2.0 * m.row(0)[node] - m.row(1)[node]).epsilon(1e-15));
}

TEST_CASE("placement and width gradients match finite differences") {
  test::Gen gen(33);
  for (int trial = 0; trial < 20; ++trial) {
    const Grid g = random_grid(gen);
    const int count = gen.integer(1, 4);
    std::vector<double> pos(count * g.dim), width(count);
    for (int i = 0; i < count; ++i) {
      for (int a = 0; a < g.dim; ++a) pos[i * g.dim + a] = gen.real(0.2, 0.8) * g.extent[a];
      width[i] = gen.real(1.0, 3.0) * g.spacing[0];
    }
    auto d = make_design(g, pos, width);
    const auto up = gen.reals(count * g.node_count(), -1, 1);
    const auto loss = [&](const ActuatorDesign& dd) { return test::dot(up, influence(dd, g).rows); };
    const auto gp = placement_gradient(up, d, g);
    const auto gw = width_gradient(up, d, g);
    std::vector<double> fp, fw;
    for (std::size_t k = 0; k < d.positions.size(); ++k) {
      const double h = 1e-6 * g.extent[k % g.dim];
      auto p = d, m = d;
      p.positions[k] += h;
      m.positions[k] -= h;
      fp.push_back((loss(p) - loss(m)) / (2 * h));
    }
    for (int i = 0; i < count; ++i) {
      const double h = 1e-6 * d.widths[i];
      auto p = d, m = d;
      p.widths[i] += h;
      m.widths[i] -= h;
      fw.push_back((loss(p) - loss(m)) / (2 * h));
    }
    CHECK(test::norm_rel_error(gp, fp) < 1e-6);
    CHECK(test::norm_rel_error(gw, fw) < 1e-6);
  }
}
