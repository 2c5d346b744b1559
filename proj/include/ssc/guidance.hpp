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
#include "ssc/seb.hpp"
#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

// Training-only occupancy head over the lifted volume: one anisotropic
// convolution and a per-voxel linear projection to a single logit. Nothing
// downstream consumes its output, so dropping it at inference leaves the
// semantic prediction untouched.
template <typename T>
struct GeometryHead {
    int64_t channels = 0;
    AicLayer<T> aic;
    ChannelLinearLayer<T> proj;

    GeometryHead() = default;
    GeometryHead(ParamRegistry<T>& reg, const std::string& name, int64_t channels_,
                 SplitMix64& rng)
        : channels(channels_) {
        aic = AicLayer<T>(reg, name + ".aic", channels, rng);
        proj = ChannelLinearLayer<T>(reg, name + ".proj", channels, 1, rng);
    }

    // [C,X,Y,Z] -> occupancy logits [X,Y,Z]
    TensorPtr<T> operator()(const TensorPtr<T>& f3d) const {
        auto y = aic(f3d);
        auto cols = reshape(y, Shape{channels, y->shape[1] * y->shape[2] * y->shape[3]});
        return reshape(proj(cols), Shape{f3d->shape[1], f3d->shape[2], f3d->shape[3]});
    }
};

template <typename T>
struct SemanticGuidanceResult {
    TensorPtr<T> fused;   // [C, N_s]
    TensorPtr<T> logits;  // [C_class, N_s]
};

// Semantic guidance over seed columns: two sparse encoder blocks applied in
// sequence, a fusion MLP over the concatenation of all three stages, and a
// two-layer semantic head on the fused features.
template <typename T>
struct SemanticGuidance {
    int64_t channels = 0, num_classes = 0;
    SebBlock<T> seb1, seb2;
    ChannelLinearLayer<T> fuse1, fuse2;  // 3C -> 2C -> C
    ChannelLinearLayer<T> head1, head2;  // C -> C -> C_class

    SemanticGuidance() = default;
    SemanticGuidance(ParamRegistry<T>& reg, const std::string& name, int64_t channels_,
                     int64_t num_classes_, SplitMix64& rng, int64_t fusion_input_width = -1)
        : channels(channels_), num_classes(num_classes_) {
        if (fusion_input_width < 0) fusion_input_width = 3 * channels;
        if (fusion_input_width != 3 * channels)
            throw std::invalid_argument("SemanticGuidance: fusion input width " +
                                        std::to_string(fusion_input_width) + " must be 3*C = " +
                                        std::to_string(3 * channels));
        seb1 = SebBlock<T>(reg, name + ".seb1", channels, channels, rng);
        seb2 = SebBlock<T>(reg, name + ".seb2", channels, channels, rng);
        fuse1 = ChannelLinearLayer<T>(reg, name + ".fuse1", fusion_input_width, 2 * channels, rng);
        fuse2 = ChannelLinearLayer<T>(reg, name + ".fuse2", 2 * channels, channels, rng);
        head1 = ChannelLinearLayer<T>(reg, name + ".head1", channels, channels, rng);
        head2 = ChannelLinearLayer<T>(reg, name + ".head2", channels, num_classes, rng);
    }

    // with_logits=false drops the semantic head, which feeds only the loss;
    // the fused features are identical either way
    SemanticGuidanceResult<T> operator()(const TensorPtr<T>& seed_feats,
                                         const std::vector<Coord>& coords,
                                         const std::array<int64_t, 3>& dims,
                                         bool with_logits = true) const {
        if (seed_feats->ndim() != 2 || seed_feats->shape[0] != channels)
            throw std::invalid_argument("SemanticGuidance: seed features must be [" +
                                        std::to_string(channels) + ",N], got " +
                                        shape_str(seed_feats->shape));
        auto f1 = seb1(seed_feats, coords, dims);
        auto f2 = seb2(f1, coords, dims);
        auto fused = fuse2(relu(fuse1(concat<T>({seed_feats, f1, f2}, 0))));
        SemanticGuidanceResult<T> out;
        out.fused = fused;
        if (with_logits) out.logits = head2(relu(head1(fused)));
        return out;
    }
};

// Ground-truth labels at the seed coordinates; invalid cells keep the
// sentinel and are masked out of the semantic loss downstream.
inline std::vector<uint8_t> seed_labels(const VoxelGrid<uint8_t>& labels,
                                        const std::vector<Coord>& coords) {
    detail::check_coords("seed_labels", coords, labels.spec.dims[0], labels.spec.dims[1],
                         labels.spec.dims[2]);
    std::vector<uint8_t> out;
    out.reserve(coords.size());
    for (const Coord& c : coords) out.push_back(labels.at(c[0], c[1], c[2]));
    return out;
}

}  // namespace ssc
