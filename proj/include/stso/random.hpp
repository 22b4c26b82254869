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
#include <cstdint>

#include "stso/grid.hpp"

namespace stso {

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// What a random stream is used for; folded into the key so purposes never share draws.
enum class StreamPurpose : std::uint32_t {
  kNoise = 1,
  kInitialState = 2,
  kPolicyInit = 3,
  kActuatorInit = 4,
  kTest = 5,
};

/// Coordinates of an independent stream. Draws depend only on these values,
/// never on which thread asks or in which order.
struct StreamKey {
  std::uint64_t seed = 0;
  StreamPurpose purpose = StreamPurpose::kNoise;
  std::uint32_t iteration = 0;
  std::uint32_t rollout = 0;
  std::uint32_t step = 0;
};

/// Sequential reader over one counter-based stream.
class RandomStream {
 public:
  explicit RandomStream(const StreamKey& key);

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller on pairs of uniforms.
  double normal();

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Cylindrical Wiener increment on `channels` fields: every node gets an
/// independent N(0, dt / cell_volume) draw.
NoiseIncrement sample_cylindrical_increment(const Grid& grid, int channels, double dt, RandomStream& rng);
inline NoiseIncrement sample_cylindrical_increment(const Grid& grid, double dt, RandomStream& rng) {
  return sample_cylindrical_increment(grid, 1, dt, rng);
}

}  // namespace stso
