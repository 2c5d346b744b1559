#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/nn.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/seb.hpp"
#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

// Per-voxel input features for the coarse stage: mean offset of the points
// from the voxel center (3 channels) plus log1p of the point count.
template <typename T>
SparseVoxelSet<T> featurize_points(const std::vector<std::array<double, 3>>& points,
                                   const SceneSpec& spec) {
    std::vector<double> offsets(points.size() * 3);
    std::vector<std::array<double, 3>> kept;
    kept.reserve(points.size());
    size_t k = 0;
    for (const auto& p : points) {
        auto c = world_to_voxel(spec, p);
        if (!c) continue;
        auto center = voxel_center(spec, *c);
        offsets[k * 3 + 0] = p[0] - center[0];
        offsets[k * 3 + 1] = p[1] - center[1];
        offsets[k * 3 + 2] = p[2] - center[2];
        kept.push_back(p);
        ++k;
    }
    offsets.resize(k * 3);
    auto vf = voxelize_features(kept, offsets, 3, spec);
    int64_t n = static_cast<int64_t>(vf.coords.size());
    SparseVoxelSet<T> out;
    out.coords = vf.coords;
    out.feats = make_tensor<T>(Shape{4, n});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < n; ++i)
            out.feats->data[c * n + i] = static_cast<T>(vf.feats[c * n + i]);
    for (int64_t i = 0; i < n; ++i)
        out.feats->data[3 * n + i] = static_cast<T>(std::log1p(vf.feats[3 * n + i]));
    return out;
}

template <typename T>
struct SparseLogits {
    std::vector<Coord> coords;
    TensorPtr<T> logits;  // [1, N]
};

// Coarse occupancy stage: one sparse encoder block over the voxelized point
// set, then a per-coordinate logit head. Output coordinates are exactly the
// voxelized input coordinates.
template <typename T>
struct CoarseProposal {
    SebBlock<T> seb;
    ChannelLinearLayer<T> head;

    CoarseProposal() = default;
    CoarseProposal(ParamRegistry<T>& reg, const std::string& name, int64_t width, SplitMix64& rng) {
        seb = SebBlock<T>(reg, name + ".seb", 4, width, rng);
        head = ChannelLinearLayer<T>(reg, name + ".head", width, 1, rng);
    }

    SparseLogits<T> operator()(const SparseVoxelSet<T>& input, const SceneSpec& spec) const {
        SparseLogits<T> out;
        out.coords = input.coords;
        if (input.coords.empty()) {
            out.logits = make_tensor<T>(Shape{1, 0});
            return out;
        }
        auto f = seb(input.feats, input.coords, spec.dims);
        out.logits = head(f);
        return out;
    }
};

template <typename T>
SparseLogits<T> coarse_occupancy(const std::vector<std::array<double, 3>>& points,
                                 const SceneSpec& spec, const CoarseProposal<T>& net) {
    return net(featurize_points<T>(points, spec), spec);
}

template <typename T>
struct OccupancyOutput {
    TensorPtr<T> logits;    // [X, Y, Z]
    TensorPtr<T> probs;     // sigmoid(logits)
    TensorPtr<T> features;  // [C_o, X, Y, Z]
};

// Dense completion over the scattered coarse logits: a small 3D UNet with
// two stride-2 levels and skip connections. Predicts occupancy for every
// voxel, including cells no depth point touched.
template <typename T>
struct UNetRefiner {
    int64_t c_in = 1, c_o = 8;
    std::array<int64_t, 3> widths = {16, 32, 64};
    Conv3dLayer<T> enc0, down1, mid1, down2, mid2, up1, up2, feat_head, occ_head;

    UNetRefiner() = default;
    UNetRefiner(ParamRegistry<T>& reg, const std::string& name, int64_t c_in_,
                std::array<int64_t, 3> widths_, int64_t c_o_, SplitMix64& rng)
        : c_in(c_in_), c_o(c_o_), widths(widths_) {
        auto [w0, w1, w2] = widths;
        enc0 = Conv3dLayer<T>(reg, name + ".enc0", c_in, w0, 3, 1, 1, rng);
        down1 = Conv3dLayer<T>(reg, name + ".down1", w0, w1, 2, 2, 0, rng);
        mid1 = Conv3dLayer<T>(reg, name + ".mid1", w1, w1, 3, 1, 1, rng);
        down2 = Conv3dLayer<T>(reg, name + ".down2", w1, w2, 2, 2, 0, rng);
        mid2 = Conv3dLayer<T>(reg, name + ".mid2", w2, w2, 3, 1, 1, rng);
        up1 = Conv3dLayer<T>(reg, name + ".up1", w1 + w2, w1, 3, 1, 1, rng);
        up2 = Conv3dLayer<T>(reg, name + ".up2", w0 + w1, w0, 3, 1, 1, rng);
        feat_head = Conv3dLayer<T>(reg, name + ".feat_head", w0, c_o, 1, 1, 0, rng);
        occ_head = Conv3dLayer<T>(reg, name + ".occ_head", w0, 1, 1, 1, 0, rng);
    }

    OccupancyOutput<T> operator()(const TensorPtr<T>& dense, const SceneSpec& spec) const {
        if (dense->ndim() != 4 || dense->shape[0] != c_in || dense->shape[1] != spec.dims[0] ||
            dense->shape[2] != spec.dims[1] || dense->shape[3] != spec.dims[2])
            throw std::invalid_argument("UNetRefiner: input must be [" + std::to_string(c_in) +
                                        "," + std::to_string(spec.dims[0]) + "," +
                                        std::to_string(spec.dims[1]) + "," +
                                        std::to_string(spec.dims[2]) + "], got " +
                                        shape_str(dense->shape));
        for (int64_t d : spec.dims)
            if (d % 4 != 0)
                throw std::invalid_argument("UNetRefiner: grid dimension " + std::to_string(d) +
                                            " not divisible by 4");
        auto e0 = relu(enc0(dense));
        auto m1 = relu(mid1(relu(down1(e0))));
        auto m2 = relu(mid2(relu(down2(m1))));
        auto u1 = relu(up1(concat<T>({upsample3d_nearest(m2, 2), m1}, 0)));
        auto u2 = relu(up2(concat<T>({upsample3d_nearest(u1, 2), e0}, 0)));
        OccupancyOutput<T> out;
        out.features = feat_head(u2);
        out.logits = reshape(occ_head(u2), Shape{spec.dims[0], spec.dims[1], spec.dims[2]});
        out.probs = sigmoid(out.logits);
        return out;
    }
};

template <typename T>
OccupancyOutput<T> refine_occupancy(const SparseLogits<T>& coarse, const SceneSpec& spec,
                                    const UNetRefiner<T>& net) {
    TensorPtr<T> dense;
    if (coarse.coords.empty()) {
        dense = make_tensor<T>(Shape{1, spec.dims[0], spec.dims[1], spec.dims[2]});
    } else {
        dense = reshape(scatter_voxels(coarse.logits, coarse.coords, spec.dims[0], spec.dims[1],
                                       spec.dims[2]),
                        Shape{1, spec.dims[0], spec.dims[1], spec.dims[2]});
    }
    return net(dense, spec);
}

// Seed selection: coordinates whose occupancy probability strictly exceeds
// the threshold, with their feature columns gathered from the dense volume.
// The gather is differentiable in the features; thresholding carries no
// gradient to the occupancy.
template <typename T>
SparseVoxelSet<T> select_seeds(const TensorPtr<T>& occ_probs, const TensorPtr<T>& features,
                               T threshold) {
    if (!(threshold > T(0) && threshold < T(1)))
        throw std::invalid_argument("select_seeds: threshold " + std::to_string(threshold) +
                                    " outside (0,1)");
    if (occ_probs->ndim() != 3)
        throw std::invalid_argument("select_seeds: occupancy must be [X,Y,Z], got " +
                                    shape_str(occ_probs->shape));
    if (features->ndim() != 4 || features->shape[1] != occ_probs->shape[0] ||
        features->shape[2] != occ_probs->shape[1] || features->shape[3] != occ_probs->shape[2])
        throw std::invalid_argument("select_seeds: features " + shape_str(features->shape) +
                                    " do not cover occupancy " + shape_str(occ_probs->shape));
    int64_t X = occ_probs->shape[0], Y = occ_probs->shape[1], Z = occ_probs->shape[2];
    SparseVoxelSet<T> out;
    int64_t i = 0;
    for (int64_t x = 0; x < X; ++x)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t z = 0; z < Z; ++z, ++i)
                if (occ_probs->data[i] > threshold) out.coords.push_back({x, y, z});
    out.feats = gather_voxels(features, out.coords);
    return out;
}

}  // namespace ssc
