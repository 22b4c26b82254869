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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stso/random.hpp"

namespace stso {

/// One named parameter tensor inside the flat parameter vector.
struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Activations saved by a forward pass for the matching backward pass.
struct ForwardRecord {
  std::vector<std::vector<double>> activations;  // input of every layer, then the output
  std::vector<std::vector<int>> argmax;          // per pooling layer
  const void* owner = nullptr;
  std::uint64_t generation = 0;

  std::span<const double> output() const { return activations.back(); }
};

/// Feed-forward policy phi(Z; theta) over a fixed layer vocabulary: dense,
/// 2D convolution ("same" padding), 2x2 max pooling and rectifiers. The
/// output layer is linear.
class Policy {
 public:
  enum class Kind { kMlp, kCnn };

  /// Dense network: input -> hidden... (ReLU) -> outputs.
  static Policy mlp(int inputs, const std::vector<int>& hidden, int outputs);
  /// conv -> ReLU -> pool, repeated per filter count, then a dense output
  /// layer. Input is `channels` stacked height x width images.
  static Policy cnn(int channels, int height, int width, const std::vector<int>& filters, int kernel, int outputs);

  Kind kind() const noexcept { return kind_; }
  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t output_size() const noexcept { return output_size_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<const double> parameters() const noexcept { return params_; }
  /// Mutable access invalidates outstanding forward records.
  std::span<double> mutable_parameters() noexcept {
    ++generation_;
    return params_;
  }
  void set_parameters(std::span<const double> p);

  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }

  /// Glorot-uniform weights, zero biases. Optionally zeroes the output layer.
  void xavier_init(RandomStream& rng, bool zero_output_layer = false);

  std::vector<double> forward(std::span<const double> input) const;
  void forward(std::span<const double> input, ForwardRecord& rec) const;

  /// Accumulates d/d(theta) of <upstream, output> into `param_grad` and, when
  /// non-empty, writes d/d(input) into `input_grad`.
  void backward(const ForwardRecord& rec, std::span<const double> upstream, std::span<double> param_grad,
                std::span<double> input_grad = {}) const;

  /// Outputs on every one-hot input e_j, row-major (input_size x outputs).
  /// The first layer touches only the activated column or filter footprint.
  std::vector<double> sparse_forward_pass() const;

 private:
  struct Layer {
    enum class Type { kDense, kRelu, kConv, kPool } type;
    int in = 0, out = 0;                     // dense sizes, conv channels
    int height = 0, width = 0, kernel = 0;   // conv / pool input geometry
    int out_height = 0, out_width = 0;       // pool output geometry
    std::size_t offset = 0;                  // weights, then biases
    std::size_t in_size() const;
    std::size_t out_size() const;
  };

  void add_tensor(const std::string& name, std::vector<int> shape);
  void layer_forward(std::size_t l, const std::vector<double>& x, std::vector<double>& y, std::vector<int>* argmax) const;
  void run_from(std::size_t first, std::vector<double> x, std::span<double> out) const;

  Kind kind_ = Kind::kMlp;
  std::size_t input_size_ = 0;
  std::size_t output_size_ = 0;
  std::vector<Layer> layers_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> params_;
  std::uint64_t generation_ = 1;
};

/// Draws `count` values from U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
std::vector<double> xavier_uniform(int fan_in, int fan_out, std::size_t count, RandomStream& rng);

}  // namespace stso
