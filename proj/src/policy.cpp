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

#include "stso/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stso {

std::size_t Policy::Layer::in_size() const {
  switch (type) {
    case Type::kDense:
    case Type::kRelu: return static_cast<std::size_t>(in);
    case Type::kConv:
    case Type::kPool: return static_cast<std::size_t>(in) * height * width;
  }
  return 0;
}

std::size_t Policy::Layer::out_size() const {
  switch (type) {
    case Type::kDense: return static_cast<std::size_t>(out);
    case Type::kRelu: return static_cast<std::size_t>(in);
    case Type::kConv: return static_cast<std::size_t>(out) * height * width;
    case Type::kPool: return static_cast<std::size_t>(in) * out_height * out_width;
  }
  return 0;
}

void Policy::add_tensor(const std::string& name, std::vector<int> shape) {
  std::size_t size = 1;
  for (int s : shape) size *= static_cast<std::size_t>(s);
  tensors_.push_back({name, std::move(shape), params_.size(), size});
  params_.resize(params_.size() + size, 0.0);
}

Policy Policy::mlp(int inputs, const std::vector<int>& hidden, int outputs) {
  if (inputs < 1 || outputs < 1) throw std::invalid_argument("policy needs inputs and outputs");
  Policy p;
  p.kind_ = Kind::kMlp;
  p.input_size_ = static_cast<std::size_t>(inputs);
  p.output_size_ = static_cast<std::size_t>(outputs);
  int prev = inputs;
  std::vector<int> sizes = hidden;
  sizes.push_back(outputs);
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] < 1) throw std::invalid_argument("layer widths must be positive");
    Layer d{Layer::Type::kDense};
    d.in = prev;
    d.out = sizes[k];
    d.offset = p.params_.size();
    p.add_tensor("dense" + std::to_string(k) + ".weight", {d.out, d.in});
    p.add_tensor("dense" + std::to_string(k) + ".bias", {d.out});
    p.layers_.push_back(d);
    if (k + 1 < sizes.size()) p.layers_.push_back(Layer{Layer::Type::kRelu, d.out});
    prev = sizes[k];
  }
  return p;
}

Policy Policy::cnn(int channels, int height, int width, const std::vector<int>& filters, int kernel, int outputs) {
  if (channels < 1 || height < 1 || width < 1 || outputs < 1) throw std::invalid_argument("bad CNN geometry");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("convolution kernel must be odd");
  Policy p;
  p.kind_ = Kind::kCnn;
  p.input_size_ = static_cast<std::size_t>(channels) * height * width;
  p.output_size_ = static_cast<std::size_t>(outputs);
  int c = channels, h = height, w = width;
  for (std::size_t k = 0; k < filters.size(); ++k) {
    Layer conv{Layer::Type::kConv};
    conv.in = c;
    conv.out = filters[k];
    conv.height = h;
    conv.width = w;
    conv.kernel = kernel;
    conv.offset = p.params_.size();
    p.add_tensor("conv" + std::to_string(k) + ".weight", {conv.out, conv.in, kernel, kernel});
    p.add_tensor("conv" + std::to_string(k) + ".bias", {conv.out});
    p.layers_.push_back(conv);
    p.layers_.push_back(Layer{Layer::Type::kRelu, static_cast<int>(conv.out_size())});
    Layer pool{Layer::Type::kPool};
    pool.in = conv.out;
    pool.height = h;
    pool.width = w;
    pool.out_height = (h + 1) / 2;
    pool.out_width = (w + 1) / 2;
    p.layers_.push_back(pool);
    c = conv.out;
    h = pool.out_height;
    w = pool.out_width;
  }
  Layer d{Layer::Type::kDense};
  d.in = c * h * w;
  d.out = outputs;
  d.offset = p.params_.size();
  p.add_tensor("dense.weight", {d.out, d.in});
  p.add_tensor("dense.bias", {d.out});
  p.layers_.push_back(d);
  return p;
}

void Policy::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) throw std::invalid_argument("parameter vector has wrong size");
  std::copy(values.begin(), values.end(), params_.begin());
  ++generation_;
}

std::vector<double> xavier_uniform(int fan_in, int fan_out, std::size_t count, RandomStream& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> w(count);
  for (double& x : w) x = rng.uniform(-bound, bound);
  return w;
}

void Policy::xavier_init(RandomStream& rng, bool zero_output_layer) {
  ++generation_;
  std::fill(params_.begin(), params_.end(), 0.0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    int fan_in = 0, fan_out = 0;
    std::size_t count = 0;
    if (L.type == Layer::Type::kDense) {
      fan_in = L.in;
      fan_out = L.out;
      count = static_cast<std::size_t>(L.in) * L.out;
      if (zero_output_layer && l + 1 == layers_.size()) continue;
    } else if (L.type == Layer::Type::kConv) {
      fan_in = L.in * L.kernel * L.kernel;
      fan_out = L.out * L.kernel * L.kernel;
      count = static_cast<std::size_t>(L.out) * L.in * L.kernel * L.kernel;
    } else {
      continue;
    }
    const auto w = xavier_uniform(fan_in, fan_out, count, rng);
    std::copy(w.begin(), w.end(), params_.begin() + static_cast<std::ptrdiff_t>(L.offset));
  }
}

void Policy::layer_forward(std::size_t l, const std::vector<double>& x, std::vector<double>& y,
                           std::vector<int>* argmax) const {
  const Layer& L = layers_[l];
  y.assign(L.out_size(), 0.0);
  switch (L.type) {
    case Layer::Type::kDense: {
      const double* w = params_.data() + L.offset;
      const double* b = w + static_cast<std::size_t>(L.in) * L.out;
      for (int o = 0; o < L.out; ++o) {
        const double* row = w + static_cast<std::size_t>(o) * L.in;
        double acc = 0.0;
        for (int k = 0; k < L.in; ++k) acc += row[k] * x[k];
        y[o] = acc + b[o];
      }
      break;
    }
    case Layer::Type::kRelu:
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] > 0.0 ? x[k] : 0.0;
      break;
    case Layer::Type::kConv: {
      const int H = L.height, W = L.width, K = L.kernel, P = K / 2;
      const double* w = params_.data() + L.offset;
      const double* b = w + static_cast<std::size_t>(L.out) * L.in * K * K;
      for (int oc = 0; oc < L.out; ++oc)
        for (int r = 0; r < H; ++r)
          for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int ic = 0; ic < L.in; ++ic)
              for (int ky = 0; ky < K; ++ky) {
                const int rr = r + ky - P;
                if (rr < 0 || rr >= H) continue;
                for (int kx = 0; kx < K; ++kx) {
                  const int cc = c + kx - P;
                  if (cc < 0 || cc >= W) continue;
                  acc += w[((static_cast<std::size_t>(oc) * L.in + ic) * K + ky) * K + kx] *
                         x[(static_cast<std::size_t>(ic) * H + rr) * W + cc];
                }
              }
            y[(static_cast<std::size_t>(oc) * H + r) * W + c] = acc + b[oc];
          }
      break;
    }
    case Layer::Type::kPool: {
      if (argmax) argmax->assign(y.size(), 0);
      for (int ch = 0; ch < L.in; ++ch)
        for (int r = 0; r < L.out_height; ++r)
          for (int c = 0; c < L.out_width; ++c) {
            int best = -1;
            double val = 0.0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int rr = 2 * r + dy, cc = 2 * c + dx;
                if (rr >= L.height || cc >= L.width) continue;
                const int idx = (ch * L.height + rr) * L.width + cc;
                if (best < 0 || x[idx] > val) {  // first index wins ties
                  best = idx;
                  val = x[idx];
                }
              }
            const std::size_t o = (static_cast<std::size_t>(ch) * L.out_height + r) * L.out_width + c;
            y[o] = val;
            if (argmax) (*argmax)[o] = best;
          }
      break;
    }
  }
}

void Policy::forward(std::span<const double> input, ForwardRecord& rec) const {
  if (input.size() != input_size_)
    throw std::invalid_argument("policy input has " + std::to_string(input.size()) + " entries, expected " +
                                std::to_string(input_size_));
  rec.activations.resize(layers_.size() + 1);
  rec.argmax.resize(layers_.size());
  rec.activations[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l)
    layer_forward(l, rec.activations[l], rec.activations[l + 1],
                  layers_[l].type == Layer::Type::kPool ? &rec.argmax[l] : nullptr);
  rec.owner = this;
  rec.generation = generation_;
}

std::vector<double> Policy::forward(std::span<const double> input) const {
  thread_local ForwardRecord rec;
  forward(input, rec);
  return {rec.output().begin(), rec.output().end()};
}

void Policy::backward(const ForwardRecord& rec, std::span<const double> upstream, std::span<double> param_grad,
                      std::span<double> input_grad) const {
  if (rec.owner != this || rec.generation != generation_ || rec.activations.size() != layers_.size() + 1)
    throw std::logic_error("forward record does not belong to this policy state");
  if (upstream.size() != output_size_) throw std::invalid_argument("upstream partials have wrong size");
  if (param_grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has wrong size");
  std::vector<double> g(upstream.begin(), upstream.end());
  std::vector<double> gin;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& L = layers_[l];
    const auto& x = rec.activations[l];
    gin.assign(L.in_size(), 0.0);
    switch (L.type) {
      case Layer::Type::kDense: {
        const double* w = params_.data() + L.offset;
        double* gw = param_grad.data() + L.offset;
        double* gb = gw + static_cast<std::size_t>(L.in) * L.out;
        for (int o = 0; o < L.out; ++o) {
          const double go = g[o];
          if (go == 0.0) continue;
          const double* row = w + static_cast<std::size_t>(o) * L.in;
          double* grow = gw + static_cast<std::size_t>(o) * L.in;
          for (int k = 0; k < L.in; ++k) {
            grow[k] += go * x[k];
            gin[k] += go * row[k];
          }
          gb[o] += go;
        }
        break;
      }
      case Layer::Type::kRelu:
        for (std::size_t k = 0; k < gin.size(); ++k) gin[k] = x[k] > 0.0 ? g[k] : 0.0;
        break;
      case Layer::Type::kConv: {
        const int H = L.height, W = L.width, K = L.kernel, P = K / 2;
        const double* w = params_.data() + L.offset;
        double* gw = param_grad.data() + L.offset;
        double* gb = gw + static_cast<std::size_t>(L.out) * L.in * K * K;
        for (int oc = 0; oc < L.out; ++oc)
          for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
              const double go = g[(static_cast<std::size_t>(oc) * H + r) * W + c];
              if (go == 0.0) continue;
              gb[oc] += go;
              for (int ic = 0; ic < L.in; ++ic)
                for (int ky = 0; ky < K; ++ky) {
                  const int rr = r + ky - P;
                  if (rr < 0 || rr >= H) continue;
                  for (int kx = 0; kx < K; ++kx) {
                    const int cc = c + kx - P;
                    if (cc < 0 || cc >= W) continue;
                    const std::size_t wi = ((static_cast<std::size_t>(oc) * L.in + ic) * K + ky) * K + kx;
                    const std::size_t xi = (static_cast<std::size_t>(ic) * H + rr) * W + cc;
                    gw[wi] += go * x[xi];
                    gin[xi] += go * w[wi];
                  }
                }
            }
        break;
      }
      case Layer::Type::kPool: {
        const auto& am = rec.argmax[l];
        for (std::size_t o = 0; o < g.size(); ++o) gin[static_cast<std::size_t>(am[o])] += g[o];
        break;
      }
    }
    g.swap(gin);
  }
  if (!input_grad.empty()) {
    if (input_grad.size() != input_size_) throw std::invalid_argument("input gradient buffer has wrong size");
    std::copy(g.begin(), g.end(), input_grad.begin());
  }
}

void Policy::run_from(std::size_t first, std::vector<double> x, std::span<double> out) const {
  std::vector<double> y;
  std::vector<int> am;
  for (std::size_t l = first; l < layers_.size(); ++l) {
    layer_forward(l, x, y, layers_[l].type == Layer::Type::kPool ? &am : nullptr);
    x.swap(y);
  }
  std::copy(x.begin(), x.end(), out.begin());
}

std::vector<double> Policy::sparse_forward_pass() const {
  std::vector<double> table(input_size_ * output_size_);
  const Layer& L = layers_.front();
  std::vector<double> y(L.out_size());
  for (std::size_t j = 0; j < input_size_; ++j) {
    if (L.type == Layer::Type::kDense) {
      const double* w = params_.data() + L.offset;
      const double* b = w + static_cast<std::size_t>(L.in) * L.out;
      for (int o = 0; o < L.out; ++o) y[o] = w[static_cast<std::size_t>(o) * L.in + j] + b[o];
    } else {
      // a one-hot image excites only the filter footprint around its pixel
      const int H = L.height, W = L.width, K = L.kernel, P = K / 2;
      const int ic = static_cast<int>(j / (static_cast<std::size_t>(H) * W));
      const int r0 = static_cast<int>((j / W) % H);
      const int c0 = static_cast<int>(j % W);
      const double* w = params_.data() + L.offset;
      const double* b = w + static_cast<std::size_t>(L.out) * L.in * K * K;
      for (int oc = 0; oc < L.out; ++oc) {
        std::fill(y.begin() + static_cast<std::ptrdiff_t>(oc) * H * W,
                  y.begin() + static_cast<std::ptrdiff_t>(oc + 1) * H * W, b[oc]);
        for (int ky = 0; ky < K; ++ky) {
          const int r = r0 - ky + P;
          if (r < 0 || r >= H) continue;
          for (int kx = 0; kx < K; ++kx) {
            const int c = c0 - kx + P;
            if (c < 0 || c >= W) continue;
            y[(static_cast<std::size_t>(oc) * H + r) * W + c] =
                w[((static_cast<std::size_t>(oc) * L.in + ic) * K + ky) * K + kx] + b[oc];
          }
        }
      }
    }
    run_from(1, y, std::span<double>(table.data() + j * output_size_, output_size_));
  }
  return table;
}

}  // namespace stso
