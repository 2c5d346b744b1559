#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Named parameter store. Registration order is the serialization and
// optimizer-state order, so construction order must be deterministic.
template <typename T>
class ParamRegistry {
  public:
    TensorPtr<T> add(const std::string& name, TensorPtr<T> t) {
        for (const auto& [n, _] : params_)
            if (n == name) throw std::invalid_argument("ParamRegistry: duplicate parameter " + name);
        t->requires_grad = true;
        t->ensure_grad();
        params_.emplace_back(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, TensorPtr<T>>>& entries() const { return params_; }

    std::vector<TensorPtr<T>> tensors() const {
        std::vector<TensorPtr<T>> out;
        for (const auto& [_, t] : params_) out.push_back(t);
        return out;
    }

    TensorPtr<T> find(const std::string& name) const {
        for (const auto& [n, t] : params_)
            if (n == name) return t;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [_, t] : params_) t->zero_grad();
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [_, t] : params_) n += t->numel();
        return n;
    }

  private:
    std::vector<std::pair<std::string, TensorPtr<T>>> params_;
};

namespace init {

// He-style fan-in scaling keeps relu activations at unit variance.
template <typename T>
TensorPtr<T> kaiming(ParamRegistry<T>& reg, const std::string& name, Shape shape, int64_t fan_in,
                     SplitMix64& rng) {
    T stddev = std::sqrt(T(2) / static_cast<T>(fan_in > 0 ? fan_in : 1));
    auto t = rand_normal<T>(shape, rng, T(0), stddev);
    return reg.add(name, t);
}

template <typename T>
TensorPtr<T> constant(ParamRegistry<T>& reg, const std::string& name, Shape shape, T value) {
    auto t = full_like_value<T>(shape, value);
    return reg.add(name, t);
}

// Centered delta plus small noise: the layer starts near identity along its axis.
template <typename T>
TensorPtr<T> near_delta(ParamRegistry<T>& reg, const std::string& name, int64_t channels,
                        int64_t k, SplitMix64& rng) {
    auto t = rand_normal<T>(Shape{channels, k}, rng, T(0), T(0.02));
    for (int64_t c = 0; c < channels; ++c) t->data[c * k + k / 2] += T(1);
    return reg.add(name, t);
}

}  // namespace init

template <typename T>
struct LinearLayer {
    TensorPtr<T> w, b;

    LinearLayer() = default;
    LinearLayer(ParamRegistry<T>& reg, const std::string& name, int64_t in, int64_t out,
                SplitMix64& rng) {
        w = init::kaiming(reg, name + ".w", Shape{out, in}, in, rng);
        b = init::constant(reg, name + ".b", Shape{out}, T(0));
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const { return linear(x, w, b); }
};

// Linear map over channel-major [Cin, N] columns.
template <typename T>
struct ChannelLinearLayer {
    TensorPtr<T> w, b;

    ChannelLinearLayer() = default;
    ChannelLinearLayer(ParamRegistry<T>& reg, const std::string& name, int64_t in, int64_t out,
                       SplitMix64& rng) {
        w = init::kaiming(reg, name + ".w", Shape{out, in}, in, rng);
        b = init::constant(reg, name + ".b", Shape{out}, T(0));
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const { return channel_linear(x, w, b); }
};

// relu between layers, none after the last.
template <typename T>
struct Mlp {
    std::vector<ChannelLinearLayer<T>> layers;

    Mlp() = default;
    Mlp(ParamRegistry<T>& reg, const std::string& name, const std::vector<int64_t>& dims,
        SplitMix64& rng) {
        if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
        for (size_t i = 0; i + 1 < dims.size(); ++i)
            layers.emplace_back(reg, name + ".fc" + std::to_string(i), dims[i], dims[i + 1], rng);
    }

    TensorPtr<T> operator()(TensorPtr<T> x) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](x);
            if (i + 1 < layers.size()) x = relu(x);
        }
        return x;
    }
};

template <typename T>
struct Conv2dLayer {
    TensorPtr<T> w, b;
    int64_t stride = 1, padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamRegistry<T>& reg, const std::string& name, int64_t cin, int64_t cout,
                int64_t k, int64_t stride_, int64_t padding_, SplitMix64& rng)
        : stride(stride_), padding(padding_) {
        w = init::kaiming(reg, name + ".w", Shape{cout, cin, k, k}, cin * k * k, rng);
        b = init::constant(reg, name + ".b", Shape{cout}, T(0));
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const { return conv2d(x, w, b, stride, padding); }
};

template <typename T>
struct Conv3dLayer {
    TensorPtr<T> w, b;
    int64_t stride = 1, padding = 0, dilation = 1;

    Conv3dLayer() = default;
    Conv3dLayer(ParamRegistry<T>& reg, const std::string& name, int64_t cin, int64_t cout,
                int64_t k, int64_t stride_, int64_t padding_, SplitMix64& rng, int64_t dilation_ = 1)
        : stride(stride_), padding(padding_), dilation(dilation_) {
        w = init::kaiming(reg, name + ".w", Shape{cout, cin, k, k, k}, cin * k * k * k, rng);
        b = init::constant(reg, name + ".b", Shape{cout}, T(0));
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const {
        return conv3d(x, w, b, stride, padding, dilation);
    }
};

template <typename T>
struct ChannelNormLayer {
    TensorPtr<T> gamma, beta;

    ChannelNormLayer() = default;
    ChannelNormLayer(ParamRegistry<T>& reg, const std::string& name, int64_t channels) {
        gamma = init::constant(reg, name + ".gamma", Shape{channels}, T(1));
        beta = init::constant(reg, name + ".beta", Shape{channels}, T(0));
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const { return channel_norm(x, gamma, beta); }
};

template <typename T>
struct InstanceNorm2dLayer {
    TensorPtr<T> gamma, beta;

    InstanceNorm2dLayer() = default;
    InstanceNorm2dLayer(ParamRegistry<T>& reg, const std::string& name, int64_t channels) {
        gamma = init::constant(reg, name + ".gamma", Shape{channels}, T(1));
        beta = init::constant(reg, name + ".beta", Shape{channels}, T(0));
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const { return instance_norm2d(x, gamma, beta); }
};

}  // namespace ssc
