#include "ssc/camera.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssc {

void CameraModel::validate() const {
    if (width < 1 || height < 1)
        throw std::invalid_argument("CameraModel: image size must be positive, got " +
                                    std::to_string(width) + "x" + std::to_string(height));
    if (K[6] != 0.0 || K[7] != 0.0 || K[8] != 1.0)
        throw std::invalid_argument("CameraModel: last intrinsic row must be [0,0,1]");
    if (K[0] <= 0.0 || K[4] <= 0.0)
        throw std::invalid_argument("CameraModel: focal lengths must be positive");
    // Rotation block orthonormality: R R^T = I within 1e-6.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += T[i * 4 + k] * T[j * 4 + k];
            double expect = i == j ? 1.0 : 0.0;
            if (std::abs(dot - expect) > 1e-6)
                throw std::invalid_argument("CameraModel: rotation block is not orthonormal (row " +
                                            std::to_string(i) + " . row " + std::to_string(j) +
                                            " = " + std::to_string(dot) + ")");
        }
}

ProjectedPoint CameraModel::project(const std::array<double, 3>& p) const {
    std::array<double, 3> c = to_camera(p);
    ProjectedPoint out;
    out.depth = c[2];
    if (c[2] != 0.0) {
        double px = K[0] * c[0] + K[1] * c[1] + K[2] * c[2];
        double py = K[3] * c[0] + K[4] * c[1] + K[5] * c[2];
        out.u = px / c[2];
        out.v = py / c[2];
    }
    out.in_fov = c[2] > 0.0 && out.u >= 0.0 && out.u < static_cast<double>(width) &&
                 out.v >= 0.0 && out.v < static_cast<double>(height);
    return out;
}

std::array<double, 3> CameraModel::back_project(double u, double v, double depth) const {
    double det = K[0] * (K[4] * K[8] - K[5] * K[7]) - K[1] * (K[3] * K[8] - K[5] * K[6]) +
                 K[2] * (K[3] * K[7] - K[4] * K[6]);
    if (std::abs(det) < 1e-12)
        throw std::invalid_argument("CameraModel: intrinsic matrix is singular");
    double inv[9] = {(K[4] * K[8] - K[5] * K[7]) / det, (K[2] * K[7] - K[1] * K[8]) / det,
                     (K[1] * K[5] - K[2] * K[4]) / det, (K[5] * K[6] - K[3] * K[8]) / det,
                     (K[0] * K[8] - K[2] * K[6]) / det, (K[2] * K[3] - K[0] * K[5]) / det,
                     (K[3] * K[7] - K[4] * K[6]) / det, (K[1] * K[6] - K[0] * K[7]) / det,
                     (K[0] * K[4] - K[1] * K[3]) / det};
    std::array<double, 3> ray = {inv[0] * u + inv[1] * v + inv[2], inv[3] * u + inv[4] * v + inv[5],
                                 inv[6] * u + inv[7] * v + inv[8]};
    std::array<double, 3> cam_pt = {depth * ray[0], depth * ray[1], depth * ray[2]};
    std::array<double, 3> d = {cam_pt[0] - T[3], cam_pt[1] - T[7], cam_pt[2] - T[11]};
    return {T[0] * d[0] + T[4] * d[1] + T[8] * d[2], T[1] * d[0] + T[5] * d[1] + T[9] * d[2],
            T[2] * d[0] + T[6] * d[1] + T[10] * d[2]};
}

std::vector<ProjectedPoint> project(const std::vector<std::array<double, 3>>& points,
                                    const CameraModel& cam) {
    std::vector<ProjectedPoint> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(cam.project(p));
    return out;
}

VoxelGrid<uint8_t> fov_mask(const CameraModel& cam, const SceneSpec& spec) {
    VoxelGrid<uint8_t> mask(spec, 0);
    int64_t i = 0;
    for (int64_t x = 0; x < spec.dims[0]; ++x)
        for (int64_t y = 0; y < spec.dims[1]; ++y)
            for (int64_t z = 0; z < spec.dims[2]; ++z, ++i)
                mask.values[i] = cam.project(voxel_center(spec, {x, y, z})).in_fov ? 1 : 0;
    return mask;
}

std::vector<std::array<double, 3>> back_project_depth(const DepthMap& depth,
                                                      const CameraModel& cam, int64_t stride) {
    if (stride < 1) throw std::invalid_argument("back_project_depth: stride must be positive");
    std::vector<std::array<double, 3>> out;
    for (int64_t v = 0; v < depth.height; v += stride)
        for (int64_t u = 0; u < depth.width; u += stride) {
            double d = depth.at(u, v);
            if (d <= 0.0) continue;
            out.push_back(cam.back_project(static_cast<double>(u), static_cast<double>(v), d));
        }
    return out;
}

namespace {

std::vector<double> parse_floats(const std::string& line, size_t want, const std::string& path,
                                 int line_no) {
    std::istringstream s(line);
    std::string tag;
    s >> tag;
    std::vector<double> vals;
    double v;
    while (s >> v) vals.push_back(v);
    if (vals.size() != want)
        throw std::runtime_error("cameras: " + path + " line " + std::to_string(line_no) +
                                 ": expected " + std::to_string(want) + " values after " + tag +
                                 ", got " + std::to_string(vals.size()));
    return vals;
}

}  // namespace

std::vector<CameraModel> read_cameras(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cameras: cannot open " + path);
    std::vector<CameraModel> cams;
    CameraModel cur;
    int have = 0;  // bit 0: K, bit 1: T, bit 2: SIZE
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        std::istringstream probe(line);
        std::string tag;
        probe >> tag;
        if (tag.empty() || tag[0] == '#') continue;
        if (tag == "K") {
            auto v = parse_floats(line, 9, path, line_no);
            for (int i = 0; i < 9; ++i) cur.K[i] = v[i];
            have |= 1;
        } else if (tag == "T") {
            auto v = parse_floats(line, 12, path, line_no);
            for (int i = 0; i < 12; ++i) cur.T[i] = v[i];
            have |= 2;
        } else if (tag == "SIZE") {
            auto v = parse_floats(line, 2, path, line_no);
            cur.width = static_cast<int64_t>(v[0]);
            cur.height = static_cast<int64_t>(v[1]);
            have |= 4;
        } else {
            throw std::runtime_error("cameras: " + path + " line " + std::to_string(line_no) +
                                     ": unknown tag " + tag);
        }
        if (have == 7) {
            cur.validate();
            cams.push_back(cur);
            cur = CameraModel{};
            have = 0;
        }
    }
    if (have != 0)
        throw std::runtime_error("cameras: " + path + " ends mid-block (missing K, T, or SIZE)");
    return cams;
}

void write_cameras(const std::string& path, const std::vector<CameraModel>& cams) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cameras: cannot write " + path);
    f.precision(17);
    for (const auto& c : cams) {
        f << "K";
        for (double v : c.K) f << " " << v;
        f << "\nT";
        for (double v : c.T) f << " " << v;
        f << "\nSIZE " << c.width << " " << c.height << "\n";
    }
    if (!f) throw std::runtime_error("cameras: write failed for " + path);
}

}  // namespace ssc
