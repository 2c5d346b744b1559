#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssc/voxel.hpp"

namespace ssc {

struct ProjectedPoint {
    double u = 0.0, v = 0.0;
    double depth = 0.0;
    bool in_fov = false;
};

// Pinhole camera. T = [R|t] maps world coordinates to camera coordinates;
// the image spans the half-open box [0, width) x [0, height) in pixels.
struct CameraModel {
    std::array<double, 9> K{};   // row-major 3x3
    std::array<double, 12> T{};  // row-major 3x4
    int64_t width = 0, height = 0;

    void validate() const;

    std::array<double, 3> to_camera(const std::array<double, 3>& p) const {
        return {T[0] * p[0] + T[1] * p[1] + T[2] * p[2] + T[3],
                T[4] * p[0] + T[5] * p[1] + T[6] * p[2] + T[7],
                T[8] * p[0] + T[9] * p[1] + T[10] * p[2] + T[11]};
    }

    ProjectedPoint project(const std::array<double, 3>& p) const;

    // World point of pixel (u, v) at camera depth d: R^T (d K^{-1} [u,v,1] - t).
    std::array<double, 3> back_project(double u, double v, double depth) const;
};

std::vector<ProjectedPoint> project(const std::vector<std::array<double, 3>>& points,
                                    const CameraModel& cam);

// True exactly where the voxel centroid projects inside the image with
// positive depth.
VoxelGrid<uint8_t> fov_mask(const CameraModel& cam, const SceneSpec& spec);

struct DepthMap {
    int64_t width = 0, height = 0;
    std::vector<double> data;  // row-major [v * width + u]

    DepthMap() = default;
    DepthMap(int64_t w, int64_t h) : width(w), height(h), data(static_cast<size_t>(w * h), 0.0) {}
    double at(int64_t u, int64_t v) const { return data[v * width + u]; }
    double& at(int64_t u, int64_t v) { return data[v * width + u]; }
};

// One world point per sampled pixel with positive depth; zero-depth pixels
// are invalid and skipped.
std::vector<std::array<double, 3>> back_project_depth(const DepthMap& depth,
                                                      const CameraModel& cam, int64_t stride = 1);

// Camera text format, one camera per block:
//   K  <9 floats row-major>
//   T  <12 floats row-major>
//   SIZE <width> <height>
std::vector<CameraModel> read_cameras(const std::string& path);
void write_cameras(const std::string& path, const std::vector<CameraModel>& cams);

}  // namespace ssc
