#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "ssc/diffusion.hpp"
#include "ssc/gradcheck.hpp"
#include "ssc/losses.hpp"
#include "ssc/nn.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"

using namespace ssc;

namespace {

// Overwrites every mixer kernel with an exact centered delta and every mixer
// logit with zero, making each 1D convolution the identity.
void force_identity(AicLayer<double>& aic) {
    for (int a = 0; a < 3; ++a) {
        for (int k = 0; k < 3; ++k) {
            auto& w = aic.kernels[a][k];
            int64_t C = w->shape[0], len = w->shape[1];
            for (auto& v : w->data) v = 0.0;
            for (int64_t c = 0; c < C; ++c) w->data[c * len + len / 2] = 1.0;
        }
        for (auto& v : aic.alphas[a]->data) v = 0.0;
    }
}

}  // namespace

TEST_CASE("anisotropic layer: delta kernels with the residual double the input") {
    SplitMix64 rng(SplitMix64::keyed(70, "aic_delta", 0));
    ParamRegistry<double> reg;
    AicLayer<double> aic(reg, "aic", 3, rng, /*use_norm=*/false);
    force_identity(aic);
    auto x = rand_normal<double>(Shape{3, 4, 5, 2}, rng, 0.0, 1.0);
    auto y = aic(x);
    REQUIRE(y->shape == x->shape);
    for (size_t i = 0; i < x->data.size(); ++i)
        CHECK(y->data[i] == doctest::Approx(2.0 * x->data[i]).epsilon(1e-12));
}

TEST_CASE("anisotropic layer: one-hot mixer equals a separable dense convolution") {
    SplitMix64 rng(SplitMix64::keyed(71, "aic_sep", 0));
    int64_t C = 2;
    ParamRegistry<double> reg;
    AicLayer<double> aic(reg, "aic", C, rng, /*use_norm=*/false);
    // force the k=3 slot on every axis and randomize its kernels
    for (int a = 0; a < 3; ++a) {
        aic.alphas[a]->data = {100.0, 0.0, 0.0};
        for (auto& v : aic.kernels[a][0]->data) v = rng.normal();
    }
    auto x = rand_normal<double>(Shape{C, 6, 5, 4}, rng, 0.0, 1.0);
    auto y = aic(x);

    // reference: depthwise dense 3x3x3 kernel = outer product of the three
    // per-axis kernels, applied through the verified dense convolution
    auto w = make_tensor<double>(Shape{C, C, 3, 3, 3});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 3; ++j)
                for (int64_t k = 0; k < 3; ++k)
                    w->data[(((c * C + c) * 3 + i) * 3 + j) * 3 + k] =
                        aic.kernels[0][0]->data[c * 3 + i] * aic.kernels[1][0]->data[c * 3 + j] *
                        aic.kernels[2][0]->data[c * 3 + k];
    auto dense = conv3d(x, w, TensorPtr<double>(), 1, 1);
    for (size_t i = 0; i < x->data.size(); ++i)
        CHECK(y->data[i] == doctest::Approx(dense->data[i] + x->data[i]).epsilon(1e-10));
}

TEST_CASE("anisotropic layer: gradient matches central differences") {
    SplitMix64 rng(SplitMix64::keyed(72, "aic_grad", 0));
    ParamRegistry<double> reg;
    AicLayer<double> plain(reg, "plain", 1, rng, /*use_norm=*/false);
    auto x1 = rand_normal<double>(Shape{1, 4, 4, 4}, rng, 0.0, 1.0);
    double err = gradcheck_max_rel_err<double>(
        [&](const std::vector<TensorPtr<double>>& xs) {
            return mean_all(mul(plain(xs[0]), plain(xs[0])));
        },
        {x1});
    CHECK(err <= 1e-4);

    AicLayer<double> normed(reg, "normed", 2, rng, /*use_norm=*/true);
    auto x2 = rand_normal<double>(Shape{2, 3, 4, 2}, rng, 0.0, 1.0);
    err = gradcheck_max_rel_err<double>(
        [&](const std::vector<TensorPtr<double>>& xs) {
            return mean_all(mul(normed(xs[0]), normed(xs[0])));
        },
        {x2});
    CHECK(err <= 1e-4);

    // and through the mixer weights themselves
    err = gradcheck_max_rel_err<double>(
        [&](const std::vector<TensorPtr<double>>& xs) {
            return mean_all(mul(plain(x1), plain(x1)));
        },
        {plain.alphas[0], plain.kernels[0][2]});
    CHECK(err <= 1e-4);
}

TEST_CASE("anisotropic layer: mixer weights stay on the simplex") {
    SplitMix64 rng(SplitMix64::keyed(73, "aic_simplex", 0));
    ParamRegistry<double> reg;
    AicLayer<double> aic(reg, "aic", 2, rng);
    for (int a = 0; a < 3; ++a) {
        for (auto& v : aic.alphas[a]->data) v = rng.normal() * 3.0;
        auto mix = softmax(aic.alphas[a], 0);
        double sum = 0.0;
        for (double v : mix->data) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("voxel aggregation: seed and transfer paths cover the grid exactly once") {
    SplitMix64 rng(SplitMix64::keyed(74, "agg", 0));
    int64_t C = 3, c_o = 2, X = 4, Y = 3, Z = 2;
    ParamRegistry<double> reg;
    VoxelAggregator<double> agg(reg, "agg", C, c_o, rng);
    auto f3d = rand_normal<double>(Shape{C, X, Y, Z}, rng, 0.0, 1.0);
    auto f_o = rand_normal<double>(Shape{c_o, X, Y, Z}, rng, 0.0, 1.0);

    std::vector<Coord> seeds = {{0, 0, 0}, {1, 2, 1}, {3, 0, 1}, {2, 1, 0}};
    auto seed_feats = rand_normal<double>(Shape{C, static_cast<int64_t>(seeds.size())}, rng, 0.0, 1.0);
    auto out = agg(seed_feats, seeds, f3d, f_o);
    REQUIRE(out.pre_mlp->shape == Shape{C, X, Y, Z});
    REQUIRE(out.fused->shape == Shape{C + c_o, X, Y, Z});

    // seed cells read back the seed features bit for bit
    auto back = gather_voxels(out.pre_mlp, seeds);
    for (size_t i = 0; i < back->data.size(); ++i) CHECK(back->data[i] == seed_feats->data[i]);

    // non-seed cells read back the knowledge transfer of the volume feature
    std::set<std::array<int64_t, 3>> seed_set;
    for (const Coord& c : seeds) seed_set.insert({c[0], c[1], c[2]});
    std::vector<Coord> nonseed;
    for (int64_t x = 0; x < X; ++x)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t z = 0; z < Z; ++z)
                if (!seed_set.count({x, y, z})) nonseed.push_back({x, y, z});
    auto expect = agg.kt(gather_voxels(f3d, nonseed));
    auto got = gather_voxels(out.pre_mlp, nonseed);
    for (size_t i = 0; i < got->data.size(); ++i) CHECK(got->data[i] == expect->data[i]);
}

TEST_CASE("voxel aggregation: degenerate splits") {
    SplitMix64 rng(SplitMix64::keyed(75, "agg_deg", 0));
    int64_t C = 2, c_o = 2, X = 2, Y = 2, Z = 2;
    ParamRegistry<double> reg;
    VoxelAggregator<double> agg(reg, "agg", C, c_o, rng);
    auto f3d = rand_normal<double>(Shape{C, X, Y, Z}, rng, 0.0, 1.0);
    auto f_o = rand_normal<double>(Shape{c_o, X, Y, Z}, rng, 0.0, 1.0);

    // no seeds: every voxel takes the transfer path
    auto none = agg(make_tensor<double>(Shape{C, 0}), {}, f3d, f_o);
    std::vector<Coord> all;
    for (int64_t x = 0; x < X; ++x)
        for (int64_t y = 0; y < Y; ++y)
            for (int64_t z = 0; z < Z; ++z) all.push_back({x, y, z});
    auto expect = agg.kt(gather_voxels(f3d, all));
    auto got = gather_voxels(none.pre_mlp, all);
    for (size_t i = 0; i < got->data.size(); ++i) CHECK(got->data[i] == expect->data[i]);

    // all seeds: the transfer layer is never applied
    auto seed_feats = rand_normal<double>(Shape{C, static_cast<int64_t>(all.size())}, rng, 0.0, 1.0);
    auto full = agg(seed_feats, all, f3d, f_o);
    auto full_back = gather_voxels(full.pre_mlp, all);
    for (size_t i = 0; i < full_back->data.size(); ++i)
        CHECK(full_back->data[i] == seed_feats->data[i]);

    // duplicate seed writes are an invariant violation
    std::vector<Coord> dup = {{0, 0, 0}, {0, 0, 0}};
    auto dup_feats = make_tensor<double>(Shape{C, 2});
    CHECK_THROWS_WITH_AS(agg(dup_feats, dup, f3d, f_o),
                         doctest::Contains("overlapping seed/non-seed write"),
                         std::invalid_argument);
}

TEST_CASE("voxel aggregation: gradient matches central differences") {
    SplitMix64 rng(SplitMix64::keyed(76, "agg_grad", 0));
    int64_t C = 2, c_o = 2;
    ParamRegistry<double> reg;
    VoxelAggregator<double> agg(reg, "agg", C, c_o, rng);
    auto f3d = rand_normal<double>(Shape{C, 2, 2, 2}, rng, 0.0, 1.0);
    auto f_o = rand_normal<double>(Shape{c_o, 2, 2, 2}, rng, 0.0, 1.0);
    std::vector<Coord> seeds = {{0, 0, 0}, {1, 1, 1}, {0, 1, 0}};
    auto seed_feats = rand_normal<double>(Shape{C, 3}, rng, 0.0, 1.0);
    double err = gradcheck_max_rel_err<double>(
        [&](const std::vector<TensorPtr<double>>& xs) {
            auto out = agg(xs[0], seeds, xs[1], xs[2]);
            return mean_all(mul(out.fused, out.fused));
        },
        {seed_feats, f3d, f_o});
    CHECK(err <= 1e-4);
}

TEST_CASE("semantic diffusion: per-voxel distributions and both depth configs") {
    SplitMix64 rng(SplitMix64::keyed(77, "mssd", 0));
    for (int64_t depth : {1, 3}) {
        ParamRegistry<double> reg;
        Mssd<double> mssd(reg, "mssd", 3, 5, depth, 2, rng);
        auto x = rand_normal<double>(Shape{3, 4, 4, 4}, rng, 0.0, 1.0);
        auto out = mssd(x);
        REQUIRE(out.logits->shape == Shape{5, 4, 4, 4});
        REQUIRE(out.probs->shape == Shape{5, 4, 4, 4});
        int64_t n = 4 * 4 * 4;
        for (int64_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (int64_t c = 0; c < 5; ++c) sum += out.probs->data[c * n + i];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    ParamRegistry<double> reg;
    SplitMix64 bad_rng(1);
    CHECK_THROWS_AS(Mssd<double>(reg, "bad", 3, 5, 0, 2, bad_rng), std::invalid_argument);
}

TEST_CASE("semantic diffusion: perturbations stay inside the analytic receptive box") {
    SplitMix64 rng(SplitMix64::keyed(78, "mssd_rf", 0));
    // depth 1, norm off: one anisotropic layer reaches +-3 per axis (kernel 7),
    // the pyramid adds +-3 (3x3x3 at dilation 3), so the box radius is 6
    ParamRegistry<double> reg;
    Mssd<double> mssd(reg, "mssd", 2, 3, 1, 2, rng, /*use_norm=*/false);
    int64_t X = 16, Y = 16, Z = 8;
    auto x = rand_normal<double>(Shape{2, X, Y, Z}, rng, 0.0, 1.0);
    auto base = mssd(x);

    auto x2 = make_tensor<double>(x->shape);
    x2->data = x->data;
    Coord p = {8, 8, 4};
    x2->data[(0 * X + p[0]) * Y * Z + p[1] * Z + p[2]] += 1.0;
    auto moved = mssd(x2);

    int64_t radius = 6;
    int64_t n = X * Y * Z;
    bool any_changed = false;
    for (int64_t xx = 0; xx < X; ++xx)
        for (int64_t yy = 0; yy < Y; ++yy)
            for (int64_t zz = 0; zz < Z; ++zz) {
                int64_t i = (xx * Y + yy) * Z + zz;
                bool inside = std::llabs(xx - p[0]) <= radius && std::llabs(yy - p[1]) <= radius &&
                              std::llabs(zz - p[2]) <= radius;
                for (int64_t c = 0; c < 3; ++c) {
                    if (inside) {
                        any_changed |= moved.logits->data[c * n + i] != base.logits->data[c * n + i];
                    } else {
                        CHECK(moved.logits->data[c * n + i] == base.logits->data[c * n + i]);
                    }
                }
            }
    CHECK(any_changed);
}

TEST_CASE("semantic diffusion: gradient matches central differences") {
    SplitMix64 rng(SplitMix64::keyed(79, "mssd_grad", 0));
    ParamRegistry<double> reg;
    Mssd<double> mssd(reg, "mssd", 2, 3, 1, 2, rng);
    auto x = rand_normal<double>(Shape{2, 4, 4, 4}, rng, 0.0, 1.0);
    std::vector<uint8_t> labels(64);
    SplitMix64 lr(SplitMix64::keyed(79, "labels", 0));
    for (auto& l : labels) l = static_cast<uint8_t>(lr.uniform_int(0, 2));
    double err = gradcheck_max_rel_err<double>(
        [&](const std::vector<TensorPtr<double>>& xs) {
            auto out = mssd(xs[0]);
            return ce_loss(reshape(out.logits, Shape{3, 64}), labels);
        },
        {x});
    CHECK(err <= 1e-4);
}
