#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/aic.hpp"
#include "ssc/nn.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

template <typename T>
struct AggregateResult {
    TensorPtr<T> pre_mlp;  // [C, X, Y, Z]: seed features and transferred

                           // non-seed features scattered side by side
    TensorPtr<T> fused;    // [C + C_o, X, Y, Z]
};

// Combines seed features with the rest of the volume: non-seed columns pass
// through a knowledge-transfer linear layer, both groups are scattered into
// one grid (each voxel written exactly once), occupancy-aware features are
// concatenated, and a per-voxel MLP mixes the result.
template <typename T>
struct VoxelAggregator {
    int64_t channels = 0, c_o = 0;
    ChannelLinearLayer<T> kt;          // C -> C on non-seed columns
    ChannelLinearLayer<T> mlp1, mlp2;  // (C+C_o) -> (C+C_o) -> (C+C_o)

    VoxelAggregator() = default;
    VoxelAggregator(ParamRegistry<T>& reg, const std::string& name, int64_t channels_,
                    int64_t c_o_, SplitMix64& rng)
        : channels(channels_), c_o(c_o_) {
        kt = ChannelLinearLayer<T>(reg, name + ".kt", channels, channels, rng);
        mlp1 = ChannelLinearLayer<T>(reg, name + ".mlp1", channels + c_o, channels + c_o, rng);
        mlp2 = ChannelLinearLayer<T>(reg, name + ".mlp2", channels + c_o, channels + c_o, rng);
    }

    AggregateResult<T> operator()(const TensorPtr<T>& seed_feats,
                                  const std::vector<Coord>& seed_coords,
                                  const TensorPtr<T>& f3d, const TensorPtr<T>& f_o) const {
        if (f3d->ndim() != 4 || f3d->shape[0] != channels)
            throw std::invalid_argument("VoxelAggregator: volume must be [" +
                                        std::to_string(channels) + ",X,Y,Z], got " +
                                        shape_str(f3d->shape));
        int64_t X = f3d->shape[1], Y = f3d->shape[2], Z = f3d->shape[3];
        if (f_o->ndim() != 4 || f_o->shape[0] != c_o || f_o->shape[1] != X ||
            f_o->shape[2] != Y || f_o->shape[3] != Z)
            throw std::invalid_argument("VoxelAggregator: occupancy features must be [" +
                                        std::to_string(c_o) + "," + std::to_string(X) + "," +
                                        std::to_string(Y) + "," + std::to_string(Z) + "], got " +
                                        shape_str(f_o->shape));
        if (seed_feats->ndim() != 2 || seed_feats->shape[0] != channels ||
            seed_feats->shape[1] != static_cast<int64_t>(seed_coords.size()))
            throw std::invalid_argument("VoxelAggregator: seed features must be [" +
                                        std::to_string(channels) + "," +
                                        std::to_string(seed_coords.size()) + "], got " +
                                        shape_str(seed_feats->shape));

        // one write per voxel: seeds claim their cells, the rest take the
        // knowledge-transfer path
        std::vector<uint8_t> writes(static_cast<size_t>(X * Y * Z), 0);
        detail::check_coords("VoxelAggregator", seed_coords, X, Y, Z);
        for (const Coord& c : seed_coords) {
            size_t idx = static_cast<size_t>((c[0] * Y + c[1]) * Z + c[2]);
            if (writes[idx])
                throw std::invalid_argument(
                    "VoxelAggregator: overlapping seed/non-seed write at (" +
                    std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
                    std::to_string(c[2]) + ")");
            writes[idx] = 1;
        }
        std::vector<Coord> nonseed;
        nonseed.reserve(static_cast<size_t>(X * Y * Z) - seed_coords.size());
        int64_t i = 0;
        for (int64_t x = 0; x < X; ++x)
            for (int64_t y = 0; y < Y; ++y)
                for (int64_t z = 0; z < Z; ++z, ++i)
                    if (!writes[static_cast<size_t>(i)]) {
                        nonseed.push_back({x, y, z});
                        writes[static_cast<size_t>(i)] = 1;
                    }
        for (uint8_t w : writes)
            if (w != 1)
                throw std::invalid_argument("VoxelAggregator: overlapping seed/non-seed write");

        auto transferred = kt(gather_voxels(f3d, nonseed));
        TensorPtr<T> pre_mlp;
        if (seed_coords.empty()) {
            pre_mlp = scatter_voxels(transferred, nonseed, X, Y, Z);
        } else if (nonseed.empty()) {
            pre_mlp = scatter_voxels(seed_feats, seed_coords, X, Y, Z);
        } else {
            pre_mlp = add(scatter_voxels(seed_feats, seed_coords, X, Y, Z),
                          scatter_voxels(transferred, nonseed, X, Y, Z));
        }
        auto stacked = concat<T>({pre_mlp, f_o}, 0);
        auto cols = reshape(stacked, Shape{channels + c_o, X * Y * Z});
        auto mixed = mlp2(relu(mlp1(cols)));
        AggregateResult<T> out;
        out.pre_mlp = pre_mlp;
        out.fused = reshape(mixed, Shape{channels + c_o, X, Y, Z});
        return out;
    }
};

// Dilated spatial pyramid over the volume: a 1x1 reduction, three 3x3x3
// branches at dilation rates {1,2,3}, and a 1x1 fusion back to the input
// channel count.
template <typename T>
struct Aspp3d {
    int64_t channels = 0, width = 0;
    Conv3dLayer<T> reduce, b1, b2, b3, fuse;

    Aspp3d() = default;
    Aspp3d(ParamRegistry<T>& reg, const std::string& name, int64_t channels_, int64_t width_,
           SplitMix64& rng)
        : channels(channels_), width(width_) {
        reduce = Conv3dLayer<T>(reg, name + ".reduce", channels, width, 1, 1, 0, rng);
        b1 = Conv3dLayer<T>(reg, name + ".rate1", width, width, 3, 1, 1, rng, 1);
        b2 = Conv3dLayer<T>(reg, name + ".rate2", width, width, 3, 1, 2, rng, 2);
        b3 = Conv3dLayer<T>(reg, name + ".rate3", width, width, 3, 1, 3, rng, 3);
        fuse = Conv3dLayer<T>(reg, name + ".fuse", 3 * width, channels, 1, 1, 0, rng);
    }

    TensorPtr<T> operator()(const TensorPtr<T>& x) const {
        auto r = relu(reduce(x));
        auto y = concat<T>({relu(b1(r)), relu(b2(r)), relu(b3(r))}, 0);
        return fuse(y);
    }
};

template <typename T>
struct MssdResult {
    TensorPtr<T> logits;  // [C_class, X, Y, Z]
    TensorPtr<T> probs;   // per-voxel softmax over classes
};

// Multi-scale semantic diffusion: a stack of anisotropic convolution layers,
// the dilated pyramid, and a per-voxel linear head with softmax.
template <typename T>
struct Mssd {
    int64_t channels = 0, num_classes = 0, depth = 0;
    std::vector<AicLayer<T>> aics;
    Aspp3d<T> aspp;
    ChannelLinearLayer<T> head;

    Mssd() = default;
    Mssd(ParamRegistry<T>& reg, const std::string& name, int64_t channels_, int64_t num_classes_,
         int64_t depth_, int64_t aspp_width, SplitMix64& rng, bool use_norm = true)
        : channels(channels_), num_classes(num_classes_), depth(depth_) {
        if (depth < 1)
            throw std::invalid_argument("Mssd: depth " + std::to_string(depth) + " must be >= 1");
        for (int64_t d = 0; d < depth; ++d)
            aics.emplace_back(reg, name + ".aic" + std::to_string(d), channels, rng, use_norm);
        aspp = Aspp3d<T>(reg, name + ".aspp", channels, aspp_width, rng);
        head = ChannelLinearLayer<T>(reg, name + ".head", channels, num_classes, rng);
    }

    MssdResult<T> operator()(const TensorPtr<T>& x) const {
        auto y = x;
        for (const auto& aic : aics) y = aic(y);
        y = aspp(y);
        int64_t X = y->shape[1], Y = y->shape[2], Z = y->shape[3];
        auto logits = head(reshape(y, Shape{channels, X * Y * Z}));
        MssdResult<T> out;
        out.logits = reshape(logits, Shape{num_classes, X, Y, Z});
        out.probs = reshape(softmax(logits, 0), Shape{num_classes, X, Y, Z});
        return out;
    }
};

}  // namespace ssc
