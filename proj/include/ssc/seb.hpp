#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/nn.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

namespace detail {

// Dense coordinate-to-column lookup. -1 marks an unoccupied cell; duplicate
// coordinates are rejected because column features would be ambiguous.
inline std::vector<int32_t> coord_index_grid(const std::vector<Coord>& coords,
                                             const std::array<int64_t, 3>& dims,
                                             const char* who) {
    check_coords(who, coords, dims[0], dims[1], dims[2]);
    std::vector<int32_t> grid(static_cast<size_t>(dims[0] * dims[1] * dims[2]), -1);
    for (size_t i = 0; i < coords.size(); ++i) {
        const Coord& c = coords[i];
        size_t idx = static_cast<size_t>((c[0] * dims[1] + c[1]) * dims[2] + c[2]);
        if (grid[idx] != -1)
            throw std::invalid_argument(std::string(who) + ": duplicate coordinate (" +
                                        std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
                                        std::to_string(c[2]) + ")");
        grid[idx] = static_cast<int32_t>(i);
    }
    return grid;
}

}  // namespace detail

// 3x3x3 convolution over sparse columns that reads and writes only the given
// coordinates: neighbors absent from the set contribute zero and no new
// coordinates are created. cols is [C_in, N], weight [C_out, C_in, 3, 3, 3],
// bias [C_out] or null; result is [C_out, N] aligned with coords.
template <typename T>
TensorPtr<T> submanifold_conv3(const TensorPtr<T>& cols, const std::vector<Coord>& coords,
                               const std::array<int64_t, 3>& dims, const TensorPtr<T>& weight,
                               const TensorPtr<T>& bias) {
    if (cols->ndim() != 2)
        throw std::invalid_argument("submanifold_conv3: columns must be [C,N], got " +
                                    shape_str(cols->shape));
    int64_t c_in = cols->shape[0];
    int64_t n = cols->shape[1];
    if (static_cast<int64_t>(coords.size()) != n)
        throw std::invalid_argument("submanifold_conv3: " + std::to_string(coords.size()) +
                                    " coordinates for " + std::to_string(n) + " columns");
    if (weight->ndim() != 5 || weight->shape[1] != c_in || weight->shape[2] != 3 ||
        weight->shape[3] != 3 || weight->shape[4] != 3)
        throw std::invalid_argument("submanifold_conv3: weight must be [C_out," +
                                    std::to_string(c_in) + ",3,3,3], got " +
                                    shape_str(weight->shape));
    int64_t c_out = weight->shape[0];
    if (bias && (bias->ndim() != 1 || bias->shape[0] != c_out))
        throw std::invalid_argument("submanifold_conv3: bias must be [" + std::to_string(c_out) +
                                    "], got " + shape_str(bias->shape));
    auto grid = detail::coord_index_grid(coords, dims, "submanifold_conv3");

    // neighbor table: for each column, the 27 source columns (or -1)
    std::vector<int32_t> nbr(static_cast<size_t>(n) * 27, -1);
    for (int64_t i = 0; i < n; ++i) {
        const Coord& c = coords[static_cast<size_t>(i)];
        int64_t t = 0;
        for (int64_t dx = -1; dx <= 1; ++dx)
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dz = -1; dz <= 1; ++dz, ++t) {
                    int64_t x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
                    if (x < 0 || x >= dims[0] || y < 0 || y >= dims[1] || z < 0 || z >= dims[2])
                        continue;
                    nbr[static_cast<size_t>(i * 27 + t)] =
                        grid[static_cast<size_t>((x * dims[1] + y) * dims[2] + z)];
                }
    }

    std::vector<TensorPtr<T>> parents = {cols, weight};
    if (bias) parents.push_back(bias);
    auto out = make_op_output<T>(
        Shape{c_out, n}, parents, [cols, weight, bias, nbr, c_in, c_out, n](const Tensor<T>& o) {
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t t = 0; t < 27; ++t) {
                    int32_t j = nbr[static_cast<size_t>(i * 27 + t)];
                    if (j < 0) continue;
                    for (int64_t co = 0; co < c_out; ++co) {
                        T g = o.grad[co * n + i];
                        if (g == T(0)) continue;
                        for (int64_t ci = 0; ci < c_in; ++ci) {
                            int64_t widx = (co * c_in + ci) * 27 + t;
                            if (cols->requires_grad)
                                cols->grad[ci * n + j] += g * weight->data[widx];
                            if (weight->requires_grad)
                                weight->grad[widx] += g * cols->data[ci * n + j];
                        }
                    }
                }
                if (bias && bias->requires_grad)
                    for (int64_t co = 0; co < c_out; ++co) bias->grad[co] += o.grad[co * n + i];
            }
        });
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t co = 0; co < c_out; ++co)
            out->data[co * n + i] = bias ? bias->data[co] : T(0);
        for (int64_t t = 0; t < 27; ++t) {
            int32_t j = nbr[static_cast<size_t>(i * 27 + t)];
            if (j < 0) continue;
            for (int64_t co = 0; co < c_out; ++co) {
                T acc = T(0);
                for (int64_t ci = 0; ci < c_in; ++ci)
                    acc += weight->data[(co * c_in + ci) * 27 + t] * cols->data[ci * n + j];
                out->data[co * n + i] += acc;
            }
        }
    }
    return out;
}

template <typename T>
struct SparseDownsample {
    std::vector<Coord> coords;     // coarse coordinates, canonical order
    TensorPtr<T> cols;             // [C_out, M]
    std::vector<int64_t> parent;   // per fine column, its coarse column
};

// 2x2x2 stride-2 convolution from fine sparse columns to the coarse cells
// that contain them. Coarse cells with no occupied fine voxel do not appear.
// weight is [C_out, C_in, 2, 2, 2]; dims must be even.
template <typename T>
SparseDownsample<T> sparse_downsample2(const TensorPtr<T>& cols, const std::vector<Coord>& coords,
                                       const std::array<int64_t, 3>& dims,
                                       const TensorPtr<T>& weight, const TensorPtr<T>& bias) {
    if (cols->ndim() != 2)
        throw std::invalid_argument("sparse_downsample2: columns must be [C,N], got " +
                                    shape_str(cols->shape));
    int64_t c_in = cols->shape[0];
    int64_t n = cols->shape[1];
    if (static_cast<int64_t>(coords.size()) != n)
        throw std::invalid_argument("sparse_downsample2: " + std::to_string(coords.size()) +
                                    " coordinates for " + std::to_string(n) + " columns");
    for (int64_t d : dims)
        if (d % 2 != 0)
            throw std::invalid_argument("sparse_downsample2: grid dimension " + std::to_string(d) +
                                        " not divisible by 2");
    if (weight->ndim() != 5 || weight->shape[1] != c_in || weight->shape[2] != 2 ||
        weight->shape[3] != 2 || weight->shape[4] != 2)
        throw std::invalid_argument("sparse_downsample2: weight must be [C_out," +
                                    std::to_string(c_in) + ",2,2,2], got " +
                                    shape_str(weight->shape));
    int64_t c_out = weight->shape[0];
    if (bias && (bias->ndim() != 1 || bias->shape[0] != c_out))
        throw std::invalid_argument("sparse_downsample2: bias must be [" + std::to_string(c_out) +
                                    "], got " + shape_str(bias->shape));
    std::array<int64_t, 3> cdims = {dims[0] / 2, dims[1] / 2, dims[2] / 2};
    detail::check_coords("sparse_downsample2", coords, dims[0], dims[1], dims[2]);

    // canonical coarse ordering via an occupancy pass in index order
    std::vector<int32_t> cgrid(static_cast<size_t>(cdims[0] * cdims[1] * cdims[2]), -1);
    for (const Coord& c : coords) {
        size_t idx = static_cast<size_t>(((c[0] / 2) * cdims[1] + c[1] / 2) * cdims[2] + c[2] / 2);
        cgrid[idx] = 0;
    }
    SparseDownsample<T> out;
    for (int64_t x = 0; x < cdims[0]; ++x)
        for (int64_t y = 0; y < cdims[1]; ++y)
            for (int64_t z = 0; z < cdims[2]; ++z) {
                size_t idx = static_cast<size_t>((x * cdims[1] + y) * cdims[2] + z);
                if (cgrid[idx] < 0) continue;
                cgrid[idx] = static_cast<int32_t>(out.coords.size());
                out.coords.push_back({x, y, z});
            }
    int64_t m = static_cast<int64_t>(out.coords.size());
    out.parent.resize(static_cast<size_t>(n));
    // per fine column: coarse column and 2x2x2 tap index
    std::vector<int32_t> tap(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const Coord& c = coords[static_cast<size_t>(i)];
        size_t idx = static_cast<size_t>(((c[0] / 2) * cdims[1] + c[1] / 2) * cdims[2] + c[2] / 2);
        out.parent[static_cast<size_t>(i)] = cgrid[idx];
        tap[static_cast<size_t>(i)] =
            static_cast<int32_t>(((c[0] % 2) * 2 + c[1] % 2) * 2 + c[2] % 2);
    }
    const std::vector<int64_t>& parent = out.parent;

    std::vector<TensorPtr<T>> parents = {cols, weight};
    if (bias) parents.push_back(bias);
    auto res = make_op_output<T>(
        Shape{c_out, m}, parents,
        [cols, weight, bias, parent, tap, c_in, c_out, n, m](const Tensor<T>& o) {
            for (int64_t i = 0; i < n; ++i) {
                int64_t ci_col = parent[static_cast<size_t>(i)];
                int64_t t = tap[static_cast<size_t>(i)];
                for (int64_t co = 0; co < c_out; ++co) {
                    T g = o.grad[co * m + ci_col];
                    if (g == T(0)) continue;
                    for (int64_t ci = 0; ci < c_in; ++ci) {
                        int64_t widx = (co * c_in + ci) * 8 + t;
                        if (cols->requires_grad) cols->grad[ci * n + i] += g * weight->data[widx];
                        if (weight->requires_grad)
                            weight->grad[widx] += g * cols->data[ci * n + i];
                    }
                }
            }
            if (bias && bias->requires_grad)
                for (int64_t co = 0; co < c_out; ++co)
                    for (int64_t j = 0; j < m; ++j) bias->grad[co] += o.grad[co * m + j];
        });
    for (int64_t co = 0; co < c_out; ++co)
        for (int64_t j = 0; j < m; ++j) res->data[co * m + j] = bias ? bias->data[co] : T(0);
    for (int64_t i = 0; i < n; ++i) {
        int64_t ci_col = parent[static_cast<size_t>(i)];
        int64_t t = tap[static_cast<size_t>(i)];
        for (int64_t co = 0; co < c_out; ++co) {
            T acc = T(0);
            for (int64_t ci = 0; ci < c_in; ++ci)
                acc += weight->data[(co * c_in + ci) * 8 + t] * cols->data[ci * n + i];
            res->data[co * m + ci_col] += acc;
        }
    }
    out.cols = res;
    return out;
}

// Sparse encoder block: a feature encoder (two 3x3x3 convolutions over the
// occupied set, each with normalization and relu) in parallel with a
// geometry encoder (stride-2 downsample convolution, a coarse 3x3x3
// convolution, nearest upsample back to the fine coordinates), concatenated
// and fused 1x1. Output columns align with the input coordinates.
template <typename T>
struct SebBlock {
    int64_t c_in = 0, c_out = 0;
    TensorPtr<T> w1, b1, w2, b2;     // feature encoder convolution weights
    TensorPtr<T> wd, bd, wg, bg;     // geometry encoder weights
    ChannelNormLayer<T> norm1, norm2;
    ChannelLinearLayer<T> fuse;      // 2*c_out -> c_out

    SebBlock() = default;
    SebBlock(ParamRegistry<T>& reg, const std::string& name, int64_t c_in_, int64_t c_out_,
             SplitMix64& rng)
        : c_in(c_in_), c_out(c_out_) {
        w1 = init::kaiming(reg, name + ".feat1.w", Shape{c_out, c_in, 3, 3, 3}, c_in * 27, rng);
        b1 = init::constant(reg, name + ".feat1.b", Shape{c_out}, T(0));
        w2 = init::kaiming(reg, name + ".feat2.w", Shape{c_out, c_out, 3, 3, 3}, c_out * 27, rng);
        b2 = init::constant(reg, name + ".feat2.b", Shape{c_out}, T(0));
        wd = init::kaiming(reg, name + ".geo_down.w", Shape{c_out, c_in, 2, 2, 2}, c_in * 8, rng);
        bd = init::constant(reg, name + ".geo_down.b", Shape{c_out}, T(0));
        wg = init::kaiming(reg, name + ".geo_conv.w", Shape{c_out, c_out, 3, 3, 3}, c_out * 27, rng);
        bg = init::constant(reg, name + ".geo_conv.b", Shape{c_out}, T(0));
        norm1 = ChannelNormLayer<T>(reg, name + ".norm1", c_out);
        norm2 = ChannelNormLayer<T>(reg, name + ".norm2", c_out);
        fuse = ChannelLinearLayer<T>(reg, name + ".fuse", 2 * c_out, c_out, rng);
    }

    TensorPtr<T> operator()(const TensorPtr<T>& cols, const std::vector<Coord>& coords,
                            const std::array<int64_t, 3>& dims) const {
        if (cols->ndim() != 2 || cols->shape[0] != c_in)
            throw std::invalid_argument("SebBlock: columns must be [" + std::to_string(c_in) +
                                        ",N], got " + shape_str(cols->shape));
        if (coords.empty()) return make_tensor<T>(Shape{c_out, 0});
        // feature encoder on the fine coordinate set
        auto f1 = relu(norm1(submanifold_conv3(cols, coords, dims, w1, b1)));
        auto f2 = relu(norm2(submanifold_conv3(f1, coords, dims, w2, b2)));
        // geometry encoder through the coarse level and back
        auto down = sparse_downsample2(cols, coords, dims, wd, bd);
        auto g1 = relu(down.cols);
        std::array<int64_t, 3> cdims = {dims[0] / 2, dims[1] / 2, dims[2] / 2};
        auto g2 = relu(submanifold_conv3(g1, down.coords, cdims, wg, bg));
        auto g3 = select_columns(g2, down.parent);
        return fuse(concat<T>({f2, g3}, 0));
    }
};

}  // namespace ssc
