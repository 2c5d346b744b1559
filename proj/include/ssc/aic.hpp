#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssc/nn.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Anisotropic convolution: three consecutive per-axis 1D convolutions, each
// a mixer of kernel sizes {3,5,7} blended by a softmax-normalized 3-way
// weight, with a residual connection. With normalization on, the residual
// sum passes through per-channel normalization and relu; with it off the
// raw sum is returned (receptive-field analyses rely on that locality).
template <typename T>
struct AicLayer {
    static constexpr std::array<int64_t, 3> kKernels = {3, 5, 7};

    int64_t channels = 0;
    bool use_norm = true;
    std::array<std::array<TensorPtr<T>, 3>, 3> kernels;  // [axis][mixer slot]
    std::array<TensorPtr<T>, 3> alphas;                  // [axis], 3 logits each
    ChannelNormLayer<T> norm;

    AicLayer() = default;
    AicLayer(ParamRegistry<T>& reg, const std::string& name, int64_t channels_, SplitMix64& rng,
             bool use_norm_ = true)
        : channels(channels_), use_norm(use_norm_) {
        for (int a = 0; a < 3; ++a) {
            for (int k = 0; k < 3; ++k)
                kernels[a][k] = init::near_delta(
                    reg, name + "." + axis_name(static_cast<Axis>(a)) + static_cast<char>('3' + 2 * k),
                    channels, kKernels[k], rng);
            alphas[a] = init::constant(
                reg, name + ".alpha_" + axis_name(static_cast<Axis>(a)), Shape{3}, T(0));
        }
        if (use_norm) norm = ChannelNormLayer<T>(reg, name + ".norm", channels);
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const {
        if (x->ndim() != 4 || x->shape[0] != channels)
            throw std::invalid_argument("AicLayer: input must be [" + std::to_string(channels) +
                                        ",X,Y,Z], got " + shape_str(x->shape));
        auto cur = reshape(x, Shape{1, x->shape[0], x->shape[1], x->shape[2], x->shape[3]});
        auto x5 = cur;
        for (int a = 0; a < 3; ++a) {
            auto mix = softmax(alphas[a], 0);
            std::vector<TensorPtr<T>> terms;
            for (int k = 0; k < 3; ++k)
                terms.push_back(scalar_mul(index_scalar(mix, k),
                                           conv1d_axis(cur, kernels[a][k], static_cast<Axis>(a))));
            cur = add_n(terms);
        }
        auto out = reshape(add(x5, cur), x->shape);
        if (use_norm) out = relu(norm(out));
        return out;
    }
};

}  // namespace ssc
