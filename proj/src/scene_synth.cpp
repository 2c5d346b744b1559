#include "ssc/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ssc {

namespace {

constexpr uint8_t kRoad = 1, kBuilding = 2, kCar = 3, kVegetation = 4, kPole = 5;

// Smaller rank wins at overlaps.
int priority_rank(uint8_t cls) {
    switch (cls) {
        case kPole: return 0;
        case kCar: return 1;
        case kBuilding: return 2;
        case kVegetation: return 3;
        case kRoad: return 4;
        default: return 5;
    }
}

bool in_box(const SolidBox& b, const std::array<double, 3>& p) {
    for (int a = 0; a < 3; ++a)
        if (p[a] < b.min[a] || p[a] >= b.max[a]) return false;
    return true;
}

bool in_cylinder(const SolidCylinder& c, const std::array<double, 3>& p) {
    if (p[2] < c.z0 || p[2] >= c.z1) return false;
    double dx = p[0] - c.cx, dy = p[1] - c.cy;
    return dx * dx + dy * dy <= c.radius * c.radius;
}

SolidBox ground_box(const SceneDescription& desc) {
    SolidBox g;
    g.cls = desc.ground_class;
    g.min = desc.box_min;
    g.max = {desc.box_max[0], desc.box_max[1], desc.ground_height};
    return g;
}

struct Ray {
    std::array<double, 3> o;  // camera center
    std::array<double, 3> w;  // world displacement per unit camera depth
};

constexpr double kRayEps = 1e-9;

// Nearest positive hit parameter with an axis-aligned box, +inf if none.
double hit_box(const SolidBox& b, const Ray& r) {
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(r.w[a]) < 1e-300) {
            if (r.o[a] < b.min[a] || r.o[a] >= b.max[a])
                return std::numeric_limits<double>::infinity();
            continue;
        }
        double t0 = (b.min[a] - r.o[a]) / r.w[a];
        double t1 = (b.max[a] - r.o[a]) / r.w[a];
        if (t0 > t1) std::swap(t0, t1);
        lo = std::max(lo, t0);
        hi = std::min(hi, t1);
    }
    if (lo > hi || lo <= kRayEps) return std::numeric_limits<double>::infinity();
    return lo;
}

double hit_cylinder(const SolidCylinder& c, const Ray& r) {
    double best = std::numeric_limits<double>::infinity();
    // side wall: quadratic in the xy plane
    double ox = r.o[0] - c.cx, oy = r.o[1] - c.cy;
    double a = r.w[0] * r.w[0] + r.w[1] * r.w[1];
    double bq = 2.0 * (ox * r.w[0] + oy * r.w[1]);
    double cq = ox * ox + oy * oy - c.radius * c.radius;
    if (a > 1e-300) {
        double disc = bq * bq - 4.0 * a * cq;
        if (disc >= 0.0) {
            double sq = std::sqrt(disc);
            for (double t : {(-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)}) {
                if (t <= kRayEps || t >= best) continue;
                double z = r.o[2] + t * r.w[2];
                if (z >= c.z0 && z < c.z1) best = t;
            }
        }
    }
    // end caps
    if (std::abs(r.w[2]) > 1e-300) {
        for (double zc : {c.z0, c.z1}) {
            double t = (zc - r.o[2]) / r.w[2];
            if (t <= kRayEps || t >= best) continue;
            double dx = r.o[0] + t * r.w[0] - c.cx;
            double dy = r.o[1] + t * r.w[1] - c.cy;
            if (dx * dx + dy * dy <= c.radius * c.radius) best = t;
        }
    }
    return best;
}

double nearest_hit(const SceneDescription& desc, const Ray& r) {
    double best = std::numeric_limits<double>::infinity();
    if (desc.ground_class != 0) best = std::min(best, hit_box(ground_box(desc), r));
    for (const auto& b : desc.boxes) best = std::min(best, hit_box(b, r));
    for (const auto& c : desc.cylinders) best = std::min(best, hit_cylinder(c, r));
    return best;
}

Ray pixel_ray(const CameraModel& cam, double u, double v) {
    Ray r;
    r.o = cam.back_project(u, v, 0.0);
    auto p1 = cam.back_project(u, v, 1.0);
    r.w = {p1[0] - r.o[0], p1[1] - r.o[1], p1[2] - r.o[2]};
    return r;
}

std::string meta_path(const std::string& dir) { return dir + "/meta.txt"; }

}  // namespace

uint8_t classify_point(const SceneDescription& desc, const std::array<double, 3>& p) {
    uint8_t best = 0;
    int best_rank = priority_rank(0);
    auto consider = [&](uint8_t cls) {
        int r = priority_rank(cls);
        if (r < best_rank) {
            best = cls;
            best_rank = r;
        }
    };
    if (desc.ground_class != 0 && in_box(ground_box(desc), p)) consider(desc.ground_class);
    for (const auto& b : desc.boxes)
        if (in_box(b, p)) consider(b.cls);
    for (const auto& c : desc.cylinders)
        if (in_cylinder(c, p)) consider(c.cls);
    return best;
}

VoxelGrid<uint8_t> rasterize_labels(const SceneDescription& desc, const SceneSpec& spec) {
    spec.validate();
    VoxelGrid<uint8_t> grid(spec);
    int64_t i = 0;
    for (int64_t x = 0; x < spec.dims[0]; ++x)
        for (int64_t y = 0; y < spec.dims[1]; ++y)
            for (int64_t z = 0; z < spec.dims[2]; ++z, ++i)
                grid.values[i] = classify_point(desc, voxel_center(spec, {x, y, z}));
    return grid;
}

SceneDescription generate_scene(uint64_t seed, const SceneSpec& spec, int64_t difficulty) {
    spec.validate();
    if (difficulty < 0) throw std::invalid_argument("generate_scene: difficulty must be >= 0");
    double s = spec.voxel_size;
    auto snap = [&](int axis, int64_t cell) {
        return spec.origin[axis] + s * static_cast<double>(cell);
    };

    for (uint64_t salt = 0;; ++salt) {
        if (salt == 16)
            throw std::runtime_error("generate_scene: could not reach two non-empty classes");
        SplitMix64 rng = SplitMix64::keyed(seed, "scene", salt);
        SceneDescription desc;
        desc.seed = seed;
        desc.box_min = spec.origin;
        for (int a = 0; a < 3; ++a)
            desc.box_max[a] = spec.origin[a] + s * static_cast<double>(spec.dims[a]);
        desc.ground_class = kRoad;
        desc.ground_height = snap(2, rng.uniform_int(1, 2));

        // objects sit on the ground inside the camera wedge |y| <= 0.7 x so
        // every class has observed voxels; kinds cycle for class balance
        int64_t ground_cell = std::llround((desc.ground_height - spec.origin[2]) / s);
        for (int64_t i = 0; i < difficulty; ++i) {
            int kind = static_cast<int>(i % 4);
            int64_t x0 = rng.uniform_int(4, spec.dims[0] - 4);
            double wedge = 0.7 * s * static_cast<double>(x0);
            int64_t y_span = std::max<int64_t>(
                1, std::min<int64_t>(static_cast<int64_t>(wedge / s),
                                     (spec.dims[1] - 2) / 2));
            int64_t y0 = spec.dims[1] / 2 + rng.uniform_int(-y_span, y_span - 1);
            if (kind == 2) {
                SolidCylinder c;
                c.cls = kPole;
                c.cx = snap(0, x0) + 0.5 * s;
                c.cy = snap(1, y0) + 0.5 * s;
                c.z0 = desc.ground_height;
                c.z1 = desc.ground_height + s * static_cast<double>(rng.uniform_int(3, 5));
                c.z1 = std::min(c.z1, snap(2, spec.dims[2]));
                c.radius = 0.5 * s;
                desc.cylinders.push_back(c);
            } else {
                static constexpr uint8_t kKindClass[4] = {kCar, kBuilding, 0, kVegetation};
                SolidBox b;
                b.cls = kKindClass[kind];
                int64_t wx = rng.uniform_int(1, kind == 1 ? 3 : 2);
                int64_t wy = rng.uniform_int(1, kind == 1 ? 3 : 2);
                int64_t h = kind == 0 ? 1 : rng.uniform_int(1, kind == 1 ? 4 : 3);
                wx = std::min(wx, spec.dims[0] - x0);
                wy = std::min(wy, spec.dims[1] - y0);
                h = std::min(h, spec.dims[2] - ground_cell);
                b.min = {snap(0, x0), snap(1, y0), desc.ground_height};
                b.max = {snap(0, x0 + wx), snap(1, y0 + wy),
                         desc.ground_height + s * static_cast<double>(h)};
                desc.boxes.push_back(b);
            }
        }

        if (difficulty == 0) return desc;
        auto labels = rasterize_labels(desc, spec);
        std::set<uint8_t> classes;
        for (uint8_t v : labels.values)
            if (v != 0) classes.insert(v);
        if (classes.size() >= 2) return desc;
    }
}

DepthMap render_depth(const SceneDescription& desc, const CameraModel& cam) {
    cam.validate();
    DepthMap depth(cam.width, cam.height);
    for (int64_t v = 0; v < cam.height; ++v)
        for (int64_t u = 0; u < cam.width; ++u) {
            // integer pixel coordinates, matching the back-projection
            Ray r = pixel_ray(cam, static_cast<double>(u), static_cast<double>(v));
            double t = nearest_hit(desc, r);
            if (std::isfinite(t)) depth.at(u, v) = t;
        }
    return depth;
}

void apply_invalid_mask(VoxelGrid<uint8_t>& labels, const SceneDescription& desc,
                        const std::vector<CameraModel>& cams, double prob, SplitMix64& rng) {
    if (prob < 0.0 || prob > 1.0)
        throw std::invalid_argument("apply_invalid_mask: prob must be in [0,1]");
    const SceneSpec& spec = labels.spec;
    double slack = spec.voxel_size;
    int64_t i = 0;
    for (int64_t x = 0; x < spec.dims[0]; ++x)
        for (int64_t y = 0; y < spec.dims[1]; ++y)
            for (int64_t z = 0; z < spec.dims[2]; ++z, ++i) {
                auto c = voxel_center(spec, {x, y, z});
                bool observed = false;
                for (const auto& cam : cams) {
                    auto pp = cam.project(c);
                    if (!pp.in_fov) continue;
                    Ray r = pixel_ray(cam, pp.u, pp.v);
                    double t = nearest_hit(desc, r);
                    if (t >= pp.depth - slack) {
                        observed = true;
                        break;
                    }
                }
                // the draw happens for every unobserved voxel so the pattern
                // does not depend on the probability parameter's branch
                if (!observed && rng.uniform() < prob) labels.values[i] = 255;
            }
}

CameraModel make_frame_camera(int64_t frame) {
    CameraModel cam;
    cam.width = 128;
    cam.height = 96;
    cam.K = {64.0, 0.0, 63.5, 0.0, 64.0, 47.5, 0.0, 0.0, 1.0};
    // looking along +x from (-0.5 frame, 0, 1): camera x = -world y,
    // camera y = -world z, camera z = world x
    double cx = -0.5 * static_cast<double>(frame);
    cam.T = {0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, 0.0, -cx};
    return cam;
}

Sample build_sample(const SceneDescription& desc, const SceneSpec& working_spec,
                    const SynthParams& params, int64_t id) {
    if (params.n_t < 1) throw std::invalid_argument("build_sample: n_t must be >= 1");
    Sample sample;
    sample.id = id;
    sample.seed = desc.seed;
    sample.output_spec = working_spec.output_scale();

    for (int64_t t = 0; t < params.n_t; ++t) {
        CameraModel cam = make_frame_camera(t);
        DepthMap depth = render_depth(desc, cam);
        if (params.noise_sigma > 0.0) {
            SplitMix64 noise = SplitMix64::keyed(desc.seed, "depth_noise", static_cast<uint64_t>(t));
            for (auto& d : depth.data) {
                if (d <= 0.0) continue;
                d += params.noise_sigma * noise.normal();
                if (d <= 0.0) d = 0.0;
            }
        }
        sample.cams.push_back(cam);
        sample.depths.push_back(std::move(depth));
    }

    sample.labels = rasterize_labels(desc, sample.output_spec);
    SplitMix64 inval = SplitMix64::keyed(desc.seed, "invalid", 0);
    apply_invalid_mask(sample.labels, desc, sample.cams, params.invalid_prob, inval);
    return sample;
}

void write_sample(const std::string& root, const Sample& sample) {
    namespace fs = std::filesystem;
    std::string dir = root + "/scenes/" + std::to_string(sample.id);
    fs::create_directories(dir);
    for (size_t t = 0; t < sample.cams.size(); ++t) {
        write_cameras(dir + "/cam_" + std::to_string(t) + ".txt", {sample.cams[t]});
        const DepthMap& d = sample.depths[t];
        VoxelGrid<float> img;
        img.spec = {{0.0, 0.0, 0.0}, 1.0, {d.width, d.height, 1}};
        img.values.resize(static_cast<size_t>(d.width * d.height));
        for (int64_t u = 0; u < d.width; ++u)
            for (int64_t v = 0; v < d.height; ++v)
                img.values[u * d.height + v] = static_cast<float>(d.at(u, v));
        write_vgrid(dir + "/depth_" + std::to_string(t) + ".vgrd", img);
    }
    write_vgrid(dir + "/labels.vgrd", sample.labels);

    std::ofstream meta(meta_path(dir));
    if (!meta) throw std::runtime_error("write_sample: cannot open " + meta_path(dir));
    meta.precision(17);
    meta << "seed=" << sample.seed << "\n";
    meta << "spec=" << sample.output_spec.origin[0] << " " << sample.output_spec.origin[1] << " "
         << sample.output_spec.origin[2] << " " << sample.output_spec.voxel_size << " "
         << sample.output_spec.dims[0] << " " << sample.output_spec.dims[1] << " "
         << sample.output_spec.dims[2] << "\n";
    meta << "n_t=" << sample.cams.size() << "\n";
}

Sample read_sample(const std::string& scene_dir) {
    std::ifstream meta(meta_path(scene_dir));
    if (!meta) throw std::runtime_error("read_sample: cannot open " + meta_path(scene_dir));
    Sample sample;
    int64_t n_t = -1;
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("read_sample: malformed meta line '" + line + "'");
        std::string key = line.substr(0, eq);
        std::istringstream val(line.substr(eq + 1));
        if (key == "seed") {
            val >> sample.seed;
        } else if (key == "spec") {
            val >> sample.output_spec.origin[0] >> sample.output_spec.origin[1] >>
                sample.output_spec.origin[2] >> sample.output_spec.voxel_size >>
                sample.output_spec.dims[0] >> sample.output_spec.dims[1] >>
                sample.output_spec.dims[2];
        } else if (key == "n_t") {
            val >> n_t;
        }
        if (val.fail()) throw std::runtime_error("read_sample: malformed meta value in '" + line + "'");
    }
    if (n_t < 1) throw std::runtime_error("read_sample: meta.txt missing n_t");
    sample.output_spec.validate();

    std::string base = scene_dir;
    auto slash = base.find_last_of('/');
    sample.id = std::strtoll(base.substr(slash == std::string::npos ? 0 : slash + 1).c_str(),
                             nullptr, 10);

    for (int64_t t = 0; t < n_t; ++t) {
        auto cams = read_cameras(scene_dir + "/cam_" + std::to_string(t) + ".txt");
        if (cams.size() != 1)
            throw std::runtime_error("read_sample: expected one camera per frame file");
        sample.cams.push_back(cams[0]);
        auto img = read_vgrid_f32(scene_dir + "/depth_" + std::to_string(t) + ".vgrd");
        if (img.spec.dims[2] != 1)
            throw std::runtime_error("read_sample: depth grid must have Z=1");
        DepthMap d(img.spec.dims[0], img.spec.dims[1]);
        for (int64_t u = 0; u < d.width; ++u)
            for (int64_t v = 0; v < d.height; ++v)
                d.at(u, v) = static_cast<double>(img.values[u * d.height + v]);
        sample.depths.push_back(std::move(d));
    }
    sample.labels = read_vgrid_u8(scene_dir + "/labels.vgrd");
    // grid headers carry f32 geometry; the meta spec keeps full precision
    // and wins once the two agree at f32
    bool consistent = sample.labels.spec.dims == sample.output_spec.dims;
    for (int a = 0; a < 3 && consistent; ++a)
        consistent = static_cast<float>(sample.labels.spec.origin[a]) ==
                     static_cast<float>(sample.output_spec.origin[a]);
    consistent = consistent && static_cast<float>(sample.labels.spec.voxel_size) ==
                                   static_cast<float>(sample.output_spec.voxel_size);
    if (!consistent)
        throw std::runtime_error("read_sample: labels grid does not match the meta spec");
    sample.labels.spec = sample.output_spec;
    return sample;
}

std::vector<std::string> list_scene_dirs(const std::string& root) {
    namespace fs = std::filesystem;
    std::string scenes = root + "/scenes";
    if (!fs::is_directory(scenes))
        throw std::runtime_error("list_scene_dirs: no scenes directory under " + root);
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(scenes))
        if (e.is_directory()) dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end(), [](const std::string& a, const std::string& b) {
        auto num = [](const std::string& p) {
            auto slash = p.find_last_of('/');
            return std::strtoll(p.substr(slash + 1).c_str(), nullptr, 10);
        };
        return num(a) < num(b);
    });
    return dirs;
}

std::vector<Sample> make_dataset(uint64_t seed, int64_t count, const SceneSpec& working_spec,
                                 const SynthParams& params) {
    if (count < 0) throw std::invalid_argument("make_dataset: count must be >= 0");
    std::vector<Sample> out;
    for (int64_t i = 0; i < count; ++i) {
        auto desc = generate_scene(seed + static_cast<uint64_t>(i), working_spec, params.difficulty);
        out.push_back(build_sample(desc, working_spec, params, i));
    }
    return out;
}

}  // namespace ssc
