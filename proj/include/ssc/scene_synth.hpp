#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssc/camera.hpp"
#include "ssc/rng.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

// Synthetic world made of a ground slab, axis-aligned boxes, and vertical
// cylinders, each carrying a semantic class. The seed fully determines the
// scene.

struct SolidBox {
    std::array<double, 3> min{};
    std::array<double, 3> max{};
    uint8_t cls = 0;
};

struct SolidCylinder {
    double cx = 0.0, cy = 0.0;
    double z0 = 0.0, z1 = 0.0;
    double radius = 0.0;
    uint8_t cls = 0;
};

struct SceneDescription {
    uint64_t seed = 0;
    std::array<double, 3> box_min{};  // world extents bounding every solid
    std::array<double, 3> box_max{};
    double ground_height = 0.0;  // world z of the ground top surface
    uint8_t ground_class = 0;    // 0 disables the ground slab
    std::vector<SolidBox> boxes;
    std::vector<SolidCylinder> cylinders;
};

struct SynthParams {
    int64_t difficulty = 2;     // number of objects placed on the ground
    int64_t n_t = 5;            // camera frames per sample
    double noise_sigma = 0.5;   // depth noise stand-in for estimation error
    double invalid_prob = 1.0;  // chance an unobserved voxel is marked 255
};

// One training example: temporal camera frames with rendered depth, and the
// semantic label grid at output resolution.
struct Sample {
    int64_t id = 0;
    uint64_t seed = 0;
    SceneSpec output_spec;
    std::vector<CameraModel> cams;
    std::vector<DepthMap> depths;
    VoxelGrid<uint8_t> labels;
};

// Class priority at overlapping solids, highest first: pole, car, building,
// vegetation, road. Returns the winning class at a world point, 0 if outside
// every solid.
uint8_t classify_point(const SceneDescription& desc, const std::array<double, 3>& p);

// Deterministic scene layout, objects snapped to the working grid of `spec`
// so both working and output resolutions rasterize crisply. difficulty 0
// gives the bare ground; otherwise the rasterized grid is guaranteed to hold
// at least two non-empty classes.
SceneDescription generate_scene(uint64_t seed, const SceneSpec& spec, int64_t difficulty);

// Per-voxel class by the centroid-in-solid test.
VoxelGrid<uint8_t> rasterize_labels(const SceneDescription& desc, const SceneSpec& spec);

// Distance along the camera ray (in camera-z units) to the nearest solid
// surface, cast through integer pixel coordinates so back-projecting the
// map reproduces the hit points. No hit leaves the pixel at 0.
DepthMap render_depth(const SceneDescription& desc, const CameraModel& cam);

// Marks voxels whose centroid is occluded from every camera as invalid with
// probability `prob` per voxel. A centroid counts as observed when some
// camera sees it with no solid surface more than one voxel in front of it.
void apply_invalid_mask(VoxelGrid<uint8_t>& labels, const SceneDescription& desc,
                        const std::vector<CameraModel>& cams, double prob, SplitMix64& rng);

// The temporal rig: frame t sits 0.5 m further back along -x, all frames
// share intrinsics and look along +x from 1 m above the scene floor plane.
CameraModel make_frame_camera(int64_t frame);

// Scene -> cameras, rendered (optionally noised) depth, labels with the
// invalid mask applied.
Sample build_sample(const SceneDescription& desc, const SceneSpec& working_spec,
                    const SynthParams& params, int64_t id);

// Dataset layout under root: scenes/<id>/cam_<t>.txt, depth_<t>.vgrd,
// labels.vgrd, meta.txt.
void write_sample(const std::string& root, const Sample& sample);
Sample read_sample(const std::string& scene_dir);
std::vector<std::string> list_scene_dirs(const std::string& root);

// Generates `count` samples with seeds seed, seed+1, ...
std::vector<Sample> make_dataset(uint64_t seed, int64_t count, const SceneSpec& working_spec,
                                 const SynthParams& params);

}  // namespace ssc
