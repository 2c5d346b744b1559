#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

constexpr uint8_t kInvalidLabel = 255;

// Axis-aligned scene box: origin is the minimum corner, cell (x,y,z) spans
// [origin + idx*s, origin + (idx+1)*s) per axis.
struct SceneSpec {
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    double voxel_size = 1.0;
    std::array<int64_t, 3> dims{1, 1, 1};

    int64_t num_voxels() const { return dims[0] * dims[1] * dims[2]; }

    void validate() const {
        if (voxel_size <= 0.0) throw std::invalid_argument("SceneSpec: voxel size must be positive");
        for (int a = 0; a < 3; ++a)
            if (dims[a] < 1)
                throw std::invalid_argument("SceneSpec: dims must be at least 1, got " +
                                            std::to_string(dims[a]) + " on axis " + std::to_string(a));
    }

    // Full scale mirrors the 51.2 x 51.2 x 6.4 m box; desk scale keeps the
    // z extent and halves the footprint so tests run in minutes.
    static SceneSpec full_output() { return {{0.0, -25.6, -2.0}, 0.2, {256, 256, 32}}; }
    static SceneSpec full_working() { return {{0.0, -25.6, -2.0}, 0.4, {128, 128, 16}}; }
    static SceneSpec desk_output() { return {{0.0, -12.8, -2.0}, 0.4, {64, 64, 16}}; }
    static SceneSpec desk_working() { return {{0.0, -12.8, -2.0}, 0.8, {32, 32, 8}}; }

    // The 2x-resolution grid this working grid predicts into.
    SceneSpec output_scale() const {
        return {origin, voxel_size / 2.0, {dims[0] * 2, dims[1] * 2, dims[2] * 2}};
    }

    bool operator==(const SceneSpec& o) const {
        return origin == o.origin && voxel_size == o.voxel_size && dims == o.dims;
    }
};

template <typename V>
struct VoxelGrid {
    SceneSpec spec;
    std::vector<V> values;  // index (x*Y + y)*Z + z

    VoxelGrid() = default;
    explicit VoxelGrid(SceneSpec s, V fill = V())
        : spec(s), values(static_cast<size_t>(s.num_voxels()), fill) {
        spec.validate();
    }

    int64_t index(int64_t x, int64_t y, int64_t z) const {
        return (x * spec.dims[1] + y) * spec.dims[2] + z;
    }
    V& at(int64_t x, int64_t y, int64_t z) { return values[index(x, y, z)]; }
    const V& at(int64_t x, int64_t y, int64_t z) const { return values[index(x, y, z)]; }
};

// Seed set: unique in-bounds coordinates plus channel-major features [C, N].
template <typename T>
struct SparseVoxelSet {
    std::vector<Coord> coords;
    TensorPtr<T> feats;
};

inline std::array<double, 3> voxel_center(const SceneSpec& spec, const Coord& c) {
    return {spec.origin[0] + (static_cast<double>(c[0]) + 0.5) * spec.voxel_size,
            spec.origin[1] + (static_cast<double>(c[1]) + 0.5) * spec.voxel_size,
            spec.origin[2] + (static_cast<double>(c[2]) + 0.5) * spec.voxel_size};
}

// Centroids of every cell in canonical index order.
inline std::vector<std::array<double, 3>> centroids(const SceneSpec& spec) {
    std::vector<std::array<double, 3>> out;
    out.reserve(static_cast<size_t>(spec.num_voxels()));
    for (int64_t x = 0; x < spec.dims[0]; ++x)
        for (int64_t y = 0; y < spec.dims[1]; ++y)
            for (int64_t z = 0; z < spec.dims[2]; ++z) out.push_back(voxel_center(spec, {x, y, z}));
    return out;
}

// Cell containing p by the floor((p - origin)/s) convention; nullopt outside.
inline std::optional<Coord> world_to_voxel(const SceneSpec& spec, const std::array<double, 3>& p) {
    Coord c;
    for (int a = 0; a < 3; ++a) {
        double f = std::floor((p[a] - spec.origin[a]) / spec.voxel_size);
        if (f < 0.0 || f >= static_cast<double>(spec.dims[a])) return std::nullopt;
        c[a] = static_cast<int64_t>(f);
    }
    return c;
}

// Binary occupancy: cells containing at least one point. Out-of-bounds
// points are dropped.
inline VoxelGrid<uint8_t> voxelize_points(const std::vector<std::array<double, 3>>& points,
                                          const SceneSpec& spec) {
    VoxelGrid<uint8_t> grid(spec, 0);
    for (const auto& p : points)
        if (auto c = world_to_voxel(spec, p)) grid.at((*c)[0], (*c)[1], (*c)[2]) = 1;
    return grid;
}

struct VoxelizedFeatures {
    std::vector<Coord> coords;       // canonical index order
    int64_t channels = 0;            // F + 1 (mean features, then point count)
    std::vector<double> feats;       // channel-major [channels, N]
};

// Per-cell mean of attached point features plus a point-count channel.
// feats is row-major [N, F].
inline VoxelizedFeatures voxelize_features(const std::vector<std::array<double, 3>>& points,
                                           const std::vector<double>& feats, int64_t F,
                                           const SceneSpec& spec) {
    if (feats.size() != points.size() * static_cast<size_t>(F))
        throw std::invalid_argument("voxelize_features: " + std::to_string(feats.size()) +
                                    " feature values for " + std::to_string(points.size()) +
                                    " points of width " + std::to_string(F));
    int64_t n_cells = spec.num_voxels();
    std::vector<double> sums(static_cast<size_t>(n_cells * F), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(n_cells), 0);
    for (size_t i = 0; i < points.size(); ++i) {
        auto c = world_to_voxel(spec, points[i]);
        if (!c) continue;
        int64_t cell = ((*c)[0] * spec.dims[1] + (*c)[1]) * spec.dims[2] + (*c)[2];
        ++counts[cell];
        for (int64_t f = 0; f < F; ++f) sums[cell * F + f] += feats[i * F + f];
    }
    VoxelizedFeatures out;
    out.channels = F + 1;
    for (int64_t cell = 0; cell < n_cells; ++cell)
        if (counts[cell] > 0) {
            int64_t z = cell % spec.dims[2];
            int64_t y = (cell / spec.dims[2]) % spec.dims[1];
            int64_t x = cell / (spec.dims[2] * spec.dims[1]);
            out.coords.push_back({x, y, z});
        }
    int64_t n = static_cast<int64_t>(out.coords.size());
    out.feats.assign(static_cast<size_t>(out.channels * n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const Coord& c = out.coords[i];
        int64_t cell = (c[0] * spec.dims[1] + c[1]) * spec.dims[2] + c[2];
        for (int64_t f = 0; f < F; ++f)
            out.feats[f * n + i] = sums[cell * F + f] / static_cast<double>(counts[cell]);
        out.feats[F * n + i] = static_cast<double>(counts[cell]);
    }
    return out;
}

// Majority vote over factor^3 blocks, ignoring invalid entries; an all-invalid
// block stays invalid. On ties the smallest non-empty class id wins and the
// empty class loses to any tied non-empty class.
VoxelGrid<uint8_t> downsample_labels(const VoxelGrid<uint8_t>& labels, int64_t factor);

// Nearest-neighbor replication of each cell into its factor^3 block.
template <typename V>
VoxelGrid<V> upsample_grid(const VoxelGrid<V>& g, int64_t factor) {
    if (factor < 1) throw std::invalid_argument("upsample_grid: factor must be positive");
    SceneSpec spec = g.spec;
    spec.voxel_size /= static_cast<double>(factor);
    for (int a = 0; a < 3; ++a) spec.dims[a] *= factor;
    VoxelGrid<V> out(spec);
    for (int64_t x = 0; x < spec.dims[0]; ++x)
        for (int64_t y = 0; y < spec.dims[1]; ++y)
            for (int64_t z = 0; z < spec.dims[2]; ++z)
                out.at(x, y, z) = g.at(x / factor, y / factor, z / factor);
    return out;
}

// VGRID binary container (little-endian): magic "VGRD", u32 version = 1,
// u32 dtype (0 = u8, 1 = u16, 2 = f32), u32 X, Y, Z, f32 origin[3],
// f32 voxel_size, payload in canonical index order.
void write_vgrid(const std::string& path, const VoxelGrid<uint8_t>& g);
void write_vgrid(const std::string& path, const VoxelGrid<uint16_t>& g);
void write_vgrid(const std::string& path, const VoxelGrid<float>& g);
VoxelGrid<uint8_t> read_vgrid_u8(const std::string& path);
VoxelGrid<uint16_t> read_vgrid_u16(const std::string& path);
VoxelGrid<float> read_vgrid_f32(const std::string& path);

}  // namespace ssc
