#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssc/aic.hpp"
#include "ssc/gradcheck.hpp"
#include "ssc/losses.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/scene_synth.hpp"
#include "ssc/seb.hpp"
#include "ssc/view_transform.hpp"

namespace ssc {

namespace detail {

inline TensorPtr<double> gc_rand(const Shape& shape, SplitMix64& rng, double lo = -1.5,
                                 double hi = 1.5) {
    auto t = make_tensor<double>(shape);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Magnitudes in [0.2, 1.5]: finite differences never cross the relu kink.
inline TensorPtr<double> gc_rand_off_zero(const Shape& shape, SplitMix64& rng) {
    auto t = make_tensor<double>(shape);
    for (auto& v : t->data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.5);
    return t;
}

// Random fixed projection makes the scalar loss sensitive to every output
// entry with distinct signs, unlike a plain sum.
inline TensorPtr<double> gc_proj_like(const TensorPtr<double>& out, SplitMix64& rng) {
    return gc_rand(out->shape, rng, -1.0, 1.0);
}

inline std::vector<uint8_t> gc_labels(int64_t n, int64_t c, SplitMix64& rng,
                                      bool with_invalid = true) {
    std::vector<uint8_t> y(static_cast<size_t>(n));
    for (auto& v : y) v = static_cast<uint8_t>(rng.uniform_int(0, c - 1));
    if (with_invalid && n > 2) y[static_cast<size_t>(rng.uniform_int(0, n - 1))] = 255;
    return y;
}

}  // namespace detail

// Finite-difference checks for every differentiable operation and for the
// composite blocks whose gradients flow through custom index arithmetic.
// Each case draws its own small random shapes from the given seed and
// returns the maximum relative error between analytic and central-difference
// gradients at 64-bit precision.
inline std::vector<GradCheckCase> build_gradcheck_suite(uint64_t seed) {
    using detail::gc_labels;
    using detail::gc_proj_like;
    using detail::gc_rand;
    using detail::gc_rand_off_zero;
    using D = double;
    using F = std::function<TensorPtr<D>(const std::vector<TensorPtr<D>>&)>;

    std::vector<GradCheckCase> cases;
    auto add_case = [&](const std::string& name, std::function<double()> run) {
        cases.push_back({name, std::move(run)});
    };
    auto stream = [seed](const std::string& name) { return SplitMix64::keyed(seed, name); };

    add_case("add", [=] {
        auto rng = stream("add");
        Shape sh = {rng.uniform_int(2, 4), rng.uniform_int(2, 5)};
        auto a = gc_rand(sh, rng), b = gc_rand(sh, rng);
        auto p = gc_proj_like(a, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(add(xs[0], xs[1]), p)); };
        return gradcheck_max_rel_err<D>(f, {a, b});
    });
    add_case("sub", [=] {
        auto rng = stream("sub");
        Shape sh = {rng.uniform_int(2, 4), rng.uniform_int(2, 5)};
        auto a = gc_rand(sh, rng), b = gc_rand(sh, rng);
        auto p = gc_proj_like(a, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(sub(xs[0], xs[1]), p)); };
        return gradcheck_max_rel_err<D>(f, {a, b});
    });
    add_case("mul", [=] {
        auto rng = stream("mul");
        Shape sh = {rng.uniform_int(2, 4), rng.uniform_int(2, 5)};
        auto a = gc_rand(sh, rng), b = gc_rand(sh, rng);
        auto p = gc_proj_like(a, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(mul(xs[0], xs[1]), p)); };
        return gradcheck_max_rel_err<D>(f, {a, b});
    });
    add_case("scale", [=] {
        auto rng = stream("scale");
        auto x = gc_rand({rng.uniform_int(2, 4), rng.uniform_int(2, 6)}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(scale(xs[0], 0.7), p)); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("scalar_mul", [=] {
        auto rng = stream("scalar_mul");
        auto s = gc_rand({1}, rng);
        auto x = gc_rand({3, 2}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(scalar_mul(xs[0], xs[1]), p));
        };
        return gradcheck_max_rel_err<D>(f, {s, x});
    });
    add_case("index_scalar", [=] {
        auto rng = stream("index_scalar");
        auto x = gc_rand({7}, rng);
        F f = [](const std::vector<TensorPtr<D>>& xs) { return index_scalar(xs[0], 3); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("add_n", [=] {
        auto rng = stream("add_n");
        auto a = gc_rand({2, 3}, rng), b = gc_rand({2, 3}, rng), c = gc_rand({2, 3}, rng);
        auto p = gc_proj_like(a, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(add_n<D>({xs[0], xs[1], xs[2]}), p));
        };
        return gradcheck_max_rel_err<D>(f, {a, b, c});
    });
    add_case("reshape", [=] {
        auto rng = stream("reshape");
        auto x = gc_rand({2, 6}, rng);
        auto p = gc_rand({3, 4}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(reshape(xs[0], {3, 4}), p));
        };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("relu", [=] {
        auto rng = stream("relu");
        auto x = gc_rand_off_zero({rng.uniform_int(2, 4), rng.uniform_int(2, 6)}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(relu(xs[0]), p)); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("sigmoid", [=] {
        auto rng = stream("sigmoid");
        auto x = gc_rand({rng.uniform_int(2, 4), rng.uniform_int(2, 6)}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(sigmoid(xs[0]), p)); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("softmax_axis0", [=] {
        auto rng = stream("softmax_axis0");
        auto x = gc_rand({rng.uniform_int(2, 5), rng.uniform_int(2, 4)}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(softmax(xs[0], 0), p)); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("softmax_axis1", [=] {
        auto rng = stream("softmax_axis1");
        auto x = gc_rand({rng.uniform_int(2, 4), rng.uniform_int(2, 5)}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(softmax(xs[0], 1), p)); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("sum_all", [=] {
        auto rng = stream("sum_all");
        auto x = gc_rand({rng.uniform_int(2, 5), rng.uniform_int(2, 5)}, rng);
        F f = [](const std::vector<TensorPtr<D>>& xs) { return sum_all(xs[0]); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("mean_all", [=] {
        auto rng = stream("mean_all");
        auto x = gc_rand({rng.uniform_int(2, 5), rng.uniform_int(2, 5)}, rng);
        F f = [](const std::vector<TensorPtr<D>>& xs) { return mean_all(xs[0]); };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("concat_axis0", [=] {
        auto rng = stream("concat_axis0");
        auto a = gc_rand({2, 3}, rng), b = gc_rand({1, 3}, rng);
        auto p = gc_rand({3, 3}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(concat<D>({xs[0], xs[1]}, 0), p));
        };
        return gradcheck_max_rel_err<D>(f, {a, b});
    });
    add_case("concat_axis1", [=] {
        auto rng = stream("concat_axis1");
        auto a = gc_rand({2, 2}, rng), b = gc_rand({2, 3}, rng);
        auto p = gc_rand({2, 5}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(concat<D>({xs[0], xs[1]}, 1), p));
        };
        return gradcheck_max_rel_err<D>(f, {a, b});
    });
    add_case("linear", [=] {
        auto rng = stream("linear");
        auto x = gc_rand({5, 3}, rng);
        auto w = gc_rand({2, 3}, rng);
        auto b = gc_rand({2}, rng);
        auto p = gc_rand({5, 2}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(linear(xs[0], xs[1], xs[2]), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, w, b});
    });
    add_case("channel_linear", [=] {
        auto rng = stream("channel_linear");
        auto x = gc_rand({3, 5}, rng);
        auto w = gc_rand({2, 3}, rng);
        auto b = gc_rand({2}, rng);
        auto p = gc_rand({2, 5}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(channel_linear(xs[0], xs[1], xs[2]), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, w, b});
    });
    add_case("conv2d_stride1", [=] {
        auto rng = stream("conv2d_stride1");
        auto x = gc_rand({1, 2, 5, 6}, rng);
        auto w = gc_rand({3, 2, 3, 3}, rng);
        auto b = gc_rand({3}, rng);
        auto p = gc_rand({1, 3, 5, 6}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(conv2d(xs[0], xs[1], xs[2], 1, 1), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, w, b});
    });
    add_case("conv2d_stride2", [=] {
        auto rng = stream("conv2d_stride2");
        auto x = gc_rand({2, 2, 6, 6}, rng);
        auto w = gc_rand({2, 2, 3, 3}, rng);
        auto b = gc_rand({2}, rng);
        auto p = gc_rand({2, 2, 3, 3}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(conv2d(xs[0], xs[1], xs[2], 2, 1), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, w, b});
    });
    add_case("conv1d_axis_each", [=] {
        auto rng = stream("conv1d_axis_each");
        double worst = 0.0;
        for (int a = 0; a < 3; ++a) {
            auto x = gc_rand({2, 2, 4, 3, 3}, rng);
            auto w = gc_rand({2, 5}, rng);
            auto p = gc_proj_like(x, rng);
            Axis axis = static_cast<Axis>(a);
            F f = [p, axis](const std::vector<TensorPtr<D>>& xs) {
                return sum_all(mul(conv1d_axis(xs[0], xs[1], axis), p));
            };
            worst = std::max(worst, gradcheck_max_rel_err<D>(f, {x, w}));
        }
        return worst;
    });
    add_case("conv3d_stride1", [=] {
        auto rng = stream("conv3d_stride1");
        auto x = gc_rand({2, 4, 4, 3}, rng);
        auto w = gc_rand({2, 2, 3, 3, 3}, rng);
        auto b = gc_rand({2}, rng);
        auto p = gc_rand({2, 4, 4, 3}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(conv3d(xs[0], xs[1], xs[2], 1, 1), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, w, b});
    });
    add_case("conv3d_stride2_dilation2", [=] {
        auto rng = stream("conv3d_stride2_dilation2");
        auto x = gc_rand({1, 6, 6, 5}, rng);
        auto w = gc_rand({2, 1, 3, 3, 3}, rng);
        auto b = gc_rand({2}, rng);
        auto run_once = [&](int64_t stride, int64_t pad, int64_t dil) {
            auto out = conv3d(x, w, b, stride, pad, dil);
            auto p = gc_proj_like(out, rng);
            F f = [p, stride, pad, dil](const std::vector<TensorPtr<D>>& xs) {
                return sum_all(mul(conv3d(xs[0], xs[1], xs[2], stride, pad, dil), p));
            };
            return gradcheck_max_rel_err<D>(f, {x, w, b});
        };
        return std::max(run_once(2, 1, 1), run_once(1, 2, 2));
    });
    add_case("upsample3d_nearest", [=] {
        auto rng = stream("upsample3d_nearest");
        auto x = gc_rand({2, 2, 3, 2}, rng);
        auto p = gc_rand({2, 4, 6, 4}, rng, -1.0, 1.0);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(upsample3d_nearest(xs[0], 2), p));
        };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("gather_voxels", [=] {
        auto rng = stream("gather_voxels");
        auto grid = gc_rand({2, 3, 3, 2}, rng);
        std::vector<Coord> coords = {{0, 0, 0}, {2, 1, 1}, {1, 2, 0}, {2, 2, 1}};
        auto p = gc_rand({2, 4}, rng, -1.0, 1.0);
        F f = [p, coords](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(gather_voxels(xs[0], coords), p));
        };
        return gradcheck_max_rel_err<D>(f, {grid});
    });
    add_case("scatter_voxels", [=] {
        auto rng = stream("scatter_voxels");
        auto cols = gc_rand({2, 4}, rng);
        std::vector<Coord> coords = {{0, 0, 0}, {1, 1, 1}, {2, 0, 1}, {0, 2, 0}};
        auto p = gc_rand({2, 3, 3, 2}, rng, -1.0, 1.0);
        F f = [p, coords](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(scatter_voxels(xs[0], coords, 3, 3, 2), p));
        };
        return gradcheck_max_rel_err<D>(f, {cols});
    });
    add_case("select_columns", [=] {
        auto rng = stream("select_columns");
        auto x = gc_rand({3, 5}, rng);
        std::vector<int64_t> idx = {4, 0, 2, 2};  // repeats exercise accumulation
        auto p = gc_rand({3, 4}, rng, -1.0, 1.0);
        F f = [p, idx](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(select_columns(xs[0], idx), p));
        };
        return gradcheck_max_rel_err<D>(f, {x});
    });
    add_case("channel_norm", [=] {
        auto rng = stream("channel_norm");
        auto x = gc_rand({3, 6}, rng);
        auto g = gc_rand({3}, rng, 0.5, 1.5);
        auto b = gc_rand({3}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(channel_norm(xs[0], xs[1], xs[2]), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, g, b});
    });
    add_case("instance_norm2d", [=] {
        auto rng = stream("instance_norm2d");
        auto x = gc_rand({2, 3, 4, 4}, rng);
        auto g = gc_rand({3}, rng, 0.5, 1.5);
        auto b = gc_rand({3}, rng);
        auto p = gc_proj_like(x, rng);
        F f = [p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(instance_norm2d(xs[0], xs[1], xs[2]), p));
        };
        return gradcheck_max_rel_err<D>(f, {x, g, b});
    });
    add_case("bce_loss", [=] {
        auto rng = stream("bce_loss");
        auto probs = gc_rand({12}, rng, 0.1, 0.9);
        std::vector<uint8_t> y(12), mask(12);
        for (auto& v : y) v = rng.uniform() < 0.5;
        for (auto& v : mask) v = rng.uniform() < 0.8;
        mask[0] = 1;
        F f = [y, mask](const std::vector<TensorPtr<D>>& xs) { return bce_loss(xs[0], y, mask); };
        return gradcheck_max_rel_err<D>(f, {probs});
    });
    add_case("ce_loss", [=] {
        auto rng = stream("ce_loss");
        auto logits = gc_rand({4, 6}, rng);
        auto y = gc_labels(6, 4, rng);
        F f = [y](const std::vector<TensorPtr<D>>& xs) { return ce_loss(xs[0], y); };
        return gradcheck_max_rel_err<D>(f, {logits});
    });
    add_case("lovasz_softmax", [=] {
        auto rng = stream("lovasz_softmax");
        auto logits = gc_rand({3, 5}, rng);
        auto y = gc_labels(5, 3, rng);
        F f = [y](const std::vector<TensorPtr<D>>& xs) {
            return lovasz_softmax(softmax(xs[0], 0), y);
        };
        return gradcheck_max_rel_err<D>(f, {logits});
    });
    add_case("scal_semantic", [=] {
        auto rng = stream("scal_semantic");
        auto logits = gc_rand({3, 6}, rng);
        auto y = gc_labels(6, 3, rng);
        F f = [y](const std::vector<TensorPtr<D>>& xs) {
            return scal_loss(softmax(xs[0], 0), y, ScalMode::Sem);
        };
        return gradcheck_max_rel_err<D>(f, {logits});
    });
    add_case("scal_geometric", [=] {
        auto rng = stream("scal_geometric");
        auto logits = gc_rand({3, 6}, rng);
        auto y = gc_labels(6, 3, rng);
        F f = [y](const std::vector<TensorPtr<D>>& xs) {
            return scal_loss(softmax(xs[0], 0), y, ScalMode::Geo);
        };
        return gradcheck_max_rel_err<D>(f, {logits});
    });
    add_case("ssc_loss", [=] {
        auto rng = stream("ssc_loss");
        auto logits = gc_rand({4, 10}, rng);
        auto y = gc_labels(10, 4, rng);
        y[1] = 0;  // keep the empty class represented
        F f = [y](const std::vector<TensorPtr<D>>& xs) { return ssc_loss(xs[0], y); };
        return gradcheck_max_rel_err<D>(f, {logits});
    });
    add_case("sparse_encoder_block", [=] {
        auto rng = stream("sparse_encoder_block");
        ParamRegistry<D> reg;
        SebBlock<D> seb(reg, "seb", 2, 3, rng);
        std::array<int64_t, 3> dims = {4, 4, 2};
        std::vector<Coord> coords = {{0, 0, 0}, {1, 0, 1}, {1, 1, 0}, {3, 2, 1}, {2, 3, 0}};
        auto cols = gc_rand({2, static_cast<int64_t>(coords.size())}, rng);
        auto out = seb(cols, coords, dims);
        auto p = gc_proj_like(out, rng);
        std::vector<TensorPtr<D>> inputs = {cols};
        for (auto& t : reg.tensors()) inputs.push_back(t);
        F f = [seb, coords, dims, p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(seb(xs[0], coords, dims), p));
        };
        return gradcheck_max_rel_err<D>(f, inputs);
    });
    add_case("axial_mixing_block", [=] {
        auto rng = stream("axial_mixing_block");
        ParamRegistry<D> reg;
        AicLayer<D> aic(reg, "aic", 2, rng, true);
        auto x = gc_rand({2, 3, 4, 3}, rng);
        auto p = gc_proj_like(x, rng);
        std::vector<TensorPtr<D>> inputs = {x};
        for (auto& t : reg.tensors()) inputs.push_back(t);
        F f = [aic, p](const std::vector<TensorPtr<D>>& xs) { return sum_all(mul(aic(xs[0]), p)); };
        return gradcheck_max_rel_err<D>(f, inputs);
    });
    add_case("view_transform_features", [=] {
        auto rng = stream("view_transform_features");
        SceneSpec spec;
        spec.origin = {0.0, -1.6, -2.0};
        spec.voxel_size = 0.8;
        spec.dims = {4, 4, 2};
        std::vector<CameraModel> cams = {make_frame_camera(0), make_frame_camera(1)};
        auto f2d = gc_rand({2, 2, 6, 8}, rng);
        auto out = view_transform(f2d, cams, spec).f3d;
        auto p = gc_proj_like(out, rng);
        F f = [cams, spec, p](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(mul(view_transform(xs[0], cams, spec).f3d, p));
        };
        return gradcheck_max_rel_err<D>(f, {f2d});
    });
    // A checker that cannot flag a wrong backward proves nothing; this case
    // passes only when a deliberately corrupted gradient is rejected.
    add_case("negative_control_detects_broken_backward", [=] {
        auto rng = stream("negative_control");
        auto x = gc_rand({3, 3}, rng, 0.5, 1.5);
        auto broken_square = [](const TensorPtr<D>& in) {
            auto out = make_op_output<D>(in->shape, {in}, [in](const Tensor<D>& o) {
                if (!in->requires_grad) return;
                for (int64_t i = 0; i < o.numel(); ++i) in->grad[i] += o.grad[i];
            });
            for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = in->data[i] * in->data[i];
            return out;
        };
        F f = [broken_square](const std::vector<TensorPtr<D>>& xs) {
            return sum_all(broken_square(xs[0]));
        };
        double err = gradcheck_max_rel_err<D>(f, {x});
        return err > 0.1 ? 0.0 : 1.0;
    });

    return cases;
}

}  // namespace ssc
