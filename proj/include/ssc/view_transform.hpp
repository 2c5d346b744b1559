#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ssc/camera.hpp"
#include "ssc/ops.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

template <typename T>
struct ViewTransformResult {
    TensorPtr<T> f3d;                // [C, X, Y, Z]
    std::vector<int32_t> hit_count;  // frames whose FOV contains each voxel
    std::vector<double> weights;     // 1/hits when hit, 1 otherwise
};

namespace detail {

struct BilinearTap {
    int64_t voxel;   // flat voxel index
    int64_t frame;
    int64_t idx[4];  // spatial offsets into one frame/channel plane
    double w[4];     // bilinear weights, scaled by the per-voxel hit weight
};

}  // namespace detail

// Lifts multi-frame 2D features onto the voxel grid: each voxel centroid is
// projected into every frame, features are sampled bilinearly at the
// sub-pixel feature-map location, summed over frames that see the voxel, and
// scaled by 1/hits. Voxels seen by no frame stay zero. Differentiable w.r.t.
// the feature stack.
template <typename T>
ViewTransformResult<T> view_transform(const TensorPtr<T>& f2d,
                                      const std::vector<CameraModel>& cams,
                                      const SceneSpec& spec) {
    if (f2d->ndim() != 4)
        throw std::invalid_argument("view_transform: features must be [N_t,C,H_f,W_f], got " +
                                    shape_str(f2d->shape));
    int64_t n_frames = f2d->shape[0], C = f2d->shape[1], Hf = f2d->shape[2], Wf = f2d->shape[3];
    if (static_cast<int64_t>(cams.size()) != n_frames)
        throw std::invalid_argument("view_transform: " + std::to_string(cams.size()) +
                                    " cameras for " + std::to_string(n_frames) + " feature frames");
    spec.validate();
    for (const auto& cam : cams) cam.validate();

    int64_t n_vox = spec.num_voxels();
    ViewTransformResult<T> out;
    out.hit_count.assign(static_cast<size_t>(n_vox), 0);
    out.weights.assign(static_cast<size_t>(n_vox), 1.0);

    // Pass 1: hit counts and bilinear taps at unit weight.
    std::vector<detail::BilinearTap> taps;
    int64_t vi = 0;
    for (int64_t x = 0; x < spec.dims[0]; ++x)
        for (int64_t y = 0; y < spec.dims[1]; ++y)
            for (int64_t z = 0; z < spec.dims[2]; ++z, ++vi) {
                auto p = voxel_center(spec, {x, y, z});
                for (int64_t t = 0; t < n_frames; ++t) {
                    ProjectedPoint pp = cams[t].project(p);
                    if (!pp.in_fov) continue;
                    ++out.hit_count[vi];
                    // Image pixel -> feature-map coordinates, cell centers aligned.
                    double uf = (pp.u + 0.5) * (static_cast<double>(Wf) / cams[t].width) - 0.5;
                    double vf = (pp.v + 0.5) * (static_cast<double>(Hf) / cams[t].height) - 0.5;
                    double fu = std::floor(uf), fv = std::floor(vf);
                    double du = uf - fu, dv = vf - fv;
                    auto clampi = [](int64_t v2, int64_t hi) {
                        return v2 < 0 ? 0 : (v2 > hi ? hi : v2);
                    };
                    int64_t u0 = clampi(static_cast<int64_t>(fu), Wf - 1);
                    int64_t u1 = clampi(static_cast<int64_t>(fu) + 1, Wf - 1);
                    int64_t v0 = clampi(static_cast<int64_t>(fv), Hf - 1);
                    int64_t v1 = clampi(static_cast<int64_t>(fv) + 1, Hf - 1);
                    detail::BilinearTap tap;
                    tap.voxel = vi;
                    tap.frame = t;
                    tap.idx[0] = v0 * Wf + u0;
                    tap.idx[1] = v0 * Wf + u1;
                    tap.idx[2] = v1 * Wf + u0;
                    tap.idx[3] = v1 * Wf + u1;
                    tap.w[0] = (1.0 - dv) * (1.0 - du);
                    tap.w[1] = (1.0 - dv) * du;
                    tap.w[2] = dv * (1.0 - du);
                    tap.w[3] = dv * du;
                    taps.push_back(tap);
                }
            }
    for (int64_t i = 0; i < n_vox; ++i)
        if (out.hit_count[i] > 0) out.weights[i] = 1.0 / static_cast<double>(out.hit_count[i]);

    // Pass 2: fold the per-voxel weight into the taps.
    for (auto& tap : taps)
        for (double& w : tap.w) w *= out.weights[tap.voxel];

    Shape out_shape{C, spec.dims[0], spec.dims[1], spec.dims[2]};
    auto f3d = make_op_output<T>(
        out_shape, {f2d}, [f2d, taps, C, Hf, Wf, n_vox](const Tensor<T>& o) {
            if (!f2d->requires_grad) return;
            int64_t plane = Hf * Wf;
            for (const auto& tap : taps)
                for (int64_t c = 0; c < C; ++c) {
                    T g = o.grad[c * n_vox + tap.voxel];
                    T* gf = f2d->grad.data() + (tap.frame * C + c) * plane;
                    for (int k = 0; k < 4; ++k) gf[tap.idx[k]] += g * static_cast<T>(tap.w[k]);
                }
        });
    int64_t plane = Hf * Wf;
    for (const auto& tap : taps)
        for (int64_t c = 0; c < C; ++c) {
            const T* ff = f2d->data.data() + (tap.frame * C + c) * plane;
            T acc = T(0);
            for (int k = 0; k < 4; ++k) acc += static_cast<T>(tap.w[k]) * ff[tap.idx[k]];
            f3d->data[c * n_vox + tap.voxel] += acc;
        }
    out.f3d = f3d;
    return out;
}

}  // namespace ssc
