#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ssc/model.hpp"
#include "ssc/train.hpp"

using namespace ssc;

namespace {

// Small working volume that still satisfies the synthesizer's placement
// margins (forward axis needs at least 8 cells).
SceneSpec tiny_spec() {
    SceneSpec s;
    s.origin = {0.0, -3.2, -2.0};
    s.voxel_size = 0.8;
    s.dims = {8, 8, 4};
    return s;
}

ModelConfig tiny_config(uint64_t seed) {
    ModelConfig cfg;
    cfg.seed = seed;
    cfg.c = 4;
    cfg.c_o = 2;
    cfg.c_class = 6;
    cfg.d_mssd = 1;
    cfg.n_t = 2;
    cfg.lr = 1e-3;
    cfg.epochs = 1;
    cfg.enc_widths = {4, 4, 4};
    cfg.unet_widths = {4, 8, 8};
    cfg.coarse_width = 8;
    cfg.aspp_width = 4;
    cfg.working = tiny_spec();
    return cfg;
}

std::vector<Sample> tiny_dataset(uint64_t seed, int64_t count, int64_t n_t) {
    SynthParams params;
    params.difficulty = 2;
    params.n_t = n_t;
    params.noise_sigma = 0.0;
    return make_dataset(seed, count, tiny_spec(), params);
}

std::vector<float> concat_params(const SceneCompletionNet<float>& net) {
    std::vector<float> all;
    for (const auto& [name, t] : net.params.entries())
        all.insert(all.end(), t->data.begin(), t->data.end());
    return all;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(static_cast<bool>(is));
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("ssc_pipe_" + tag);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("config text round trips and rejects malformed input") {
    ModelConfig cfg = tiny_config(80);
    cfg.theta = 0.37;
    cfg.lr = 3.5e-4;
    cfg.max_steps = 123;
    std::string text = serialize_config(cfg);
    ModelConfig back = parse_config_text(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.seed == cfg.seed);
    CHECK(back.theta == cfg.theta);
    CHECK(back.working == cfg.working);
    CHECK(back.enc_widths == cfg.enc_widths);
    CHECK(back.unet_widths == cfg.unet_widths);

    ModelConfig o;
    apply_config_override(o, "spec_s", "0.25");
    CHECK(o.working.voxel_size == 0.25);
    apply_config_override(o, "unet2", "24");
    CHECK(o.unet_widths[1] == 24);
    CHECK_THROWS_AS(apply_config_override(o, "nope", "1"), std::invalid_argument);
    CHECK_THROWS_AS(apply_config_override(o, "c", "abc"), std::invalid_argument);
    CHECK_THROWS_AS(apply_config_override(o, "c", "3 4"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("c\n"), std::invalid_argument);
    CHECK_NOTHROW(parse_config_text("# comment\n\nc=4\n"));
}

TEST_CASE("checkpoint files round trip bit-exactly") {
    TempDir tmp("ckpt");
    auto data = tiny_dataset(81, 2, 2);
    SceneCompletionNet<float> net(tiny_config(81));
    Trainer<float> trainer(net);
    trainer.train_step(data);
    trainer.train_step(data);

    auto cp = trainer.make_checkpoint();
    CHECK(cp.step == 2);
    CHECK(cp.has_optimizer);
    write_checkpoint(tmp.file("a.ckpt"), cp);
    auto cp2 = read_checkpoint<float>(tmp.file("a.ckpt"));
    CHECK(cp2.step == cp.step);
    CHECK(cp2.rng_state == cp.rng_state);
    CHECK(cp2.opt_step == cp.opt_step);
    CHECK(serialize_config(cp2.cfg) == serialize_config(cp.cfg));
    REQUIRE(cp2.params.size() == cp.params.size());
    for (size_t i = 0; i < cp.params.size(); ++i) {
        CHECK(cp2.params[i].first == cp.params[i].first);
        CHECK(cp2.shapes[i] == cp.shapes[i]);
        CHECK(cp2.params[i].second == cp.params[i].second);
        CHECK(cp2.m1[i] == cp.m1[i]);
        CHECK(cp2.m2[i] == cp.m2[i]);
    }
    write_checkpoint(tmp.file("b.ckpt"), cp2);
    CHECK(file_bytes(tmp.file("a.ckpt")) == file_bytes(tmp.file("b.ckpt")));

    SUBCASE("format errors are reported") {
        CHECK_THROWS_AS(read_checkpoint<float>(tmp.file("missing.ckpt")), std::runtime_error);
        CHECK_THROWS_AS(read_checkpoint<double>(tmp.file("a.ckpt")), std::runtime_error);
        std::ofstream(tmp.file("junk.ckpt"), std::ios::binary) << "VGRDxxxx";
        CHECK_THROWS_AS(read_checkpoint<float>(tmp.file("junk.ckpt")), std::runtime_error);
        std::string bytes = file_bytes(tmp.file("a.ckpt"));
        std::ofstream(tmp.file("trunc.ckpt"), std::ios::binary)
            << bytes.substr(0, bytes.size() / 2);
        CHECK_THROWS_AS(read_checkpoint<float>(tmp.file("trunc.ckpt")), std::runtime_error);
    }
}

TEST_CASE("training is deterministic and prediction is mode-independent") {
    auto data = tiny_dataset(82, 2, 2);
    SceneCompletionNet<float> net_a(tiny_config(82));
    SceneCompletionNet<float> net_b(tiny_config(82));
    Trainer<float> ta(net_a);
    Trainer<float> tb(net_b);
    for (int i = 0; i < 6; ++i) {
        auto ra = ta.train_step(data);
        auto rb = tb.train_step(data);
        CHECK(ra.total == rb.total);
        CHECK(ra.n_seeds == rb.n_seeds);
        CHECK(ra.n_seeds == ra.n_above);
    }
    CHECK(concat_params(net_a) == concat_params(net_b));

    TempDir tmp("det");
    write_checkpoint(tmp.file("a.ckpt"), ta.make_checkpoint());
    write_checkpoint(tmp.file("b.ckpt"), tb.make_checkpoint());
    CHECK(file_bytes(tmp.file("a.ckpt")) == file_bytes(tmp.file("b.ckpt")));

    auto train_fwd = net_a.forward(data[0], ForwardMode::Train);
    auto infer_fwd = net_a.forward(data[0], ForwardMode::Infer);
    CHECK(train_fwd.geo_logits != nullptr);
    CHECK(train_fwd.seed_logits != nullptr);
    CHECK(infer_fwd.geo_logits == nullptr);
    CHECK(infer_fwd.seed_logits == nullptr);
    CHECK(train_fwd.prediction.values == infer_fwd.prediction.values);
    CHECK(train_fwd.prediction.spec == infer_fwd.prediction.spec);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    auto data = tiny_dataset(83, 1, 2);
    ModelConfig cfg = tiny_config(83);
    cfg.lr = 0.0;
    cfg.epochs = 2;
    SceneCompletionNet<float> net(cfg);
    auto before = concat_params(net);
    Trainer<float> trainer(net);
    auto reports = trainer.run(data, nullptr);
    CHECK(reports.size() == 2);
    CHECK(concat_params(net) == before);
    auto cp = trainer.make_checkpoint();
    CHECK_FALSE(cp.has_optimizer);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    auto data = tiny_dataset(84, 2, 2);
    TempDir tmp("resume");

    SceneCompletionNet<float> net_full(tiny_config(84));
    Trainer<float> full(net_full);
    StepReport<float> full_step3{}, full_step4{};
    for (int i = 0; i < 4; ++i) {
        auto r = full.train_step(data);
        if (i == 2) full_step3 = r;
        if (i == 3) full_step4 = r;
    }

    SceneCompletionNet<float> net_half(tiny_config(84));
    Trainer<float> half(net_half);
    half.train_step(data);
    half.train_step(data);
    write_checkpoint(tmp.file("half.ckpt"), half.make_checkpoint());

    auto cp = read_checkpoint<float>(tmp.file("half.ckpt"));
    SceneCompletionNet<float> net_res(cp.cfg);
    Trainer<float> resumed(net_res);
    resumed.restore(cp);
    CHECK(resumed.step_count() == 2);
    auto r3 = resumed.train_step(data);
    auto r4 = resumed.train_step(data);
    CHECK(r3.step == 3);
    CHECK(r3.total == full_step3.total);
    CHECK(r4.total == full_step4.total);
    CHECK(concat_params(net_res) == concat_params(net_full));
}

TEST_CASE("losses decrease when overfitting a single scene") {
    auto data = tiny_dataset(85, 1, 2);
    ModelConfig cfg = tiny_config(85);
    cfg.lr = 2e-3;
    cfg.max_steps = 40;
    SceneCompletionNet<float> net(cfg);
    Trainer<float> trainer(net);
    auto reports = trainer.run(data, nullptr);
    REQUIRE(reports.size() == 40);
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
        head += reports[static_cast<size_t>(i)].total;
        tail += reports[reports.size() - 1 - static_cast<size_t>(i)].total;
    }
    CHECK(tail < head);
}

TEST_CASE("image encoder receives gradient from the volume losses") {
    auto data = tiny_dataset(86, 1, 2);
    SceneCompletionNet<float> net(tiny_config(86));
    auto fwd = net.forward(data[0], ForwardMode::Train);
    auto losses = compute_losses(fwd, make_targets(data[0]), net.cfg);
    backward(losses.total);
    auto w = net.params.find("encoder.s0.w");
    REQUIRE(w != nullptr);
    double mag = 0;
    for (float g : w->grad) mag += std::abs(g);
    CHECK(mag > 0.0);
}

TEST_CASE("frame count and resolution contracts are enforced") {
    auto data = tiny_dataset(87, 1, 2);
    SceneCompletionNet<float> net(tiny_config(87));
    auto pred = infer_model(net, data[0]);
    CHECK(pred.spec == data[0].output_spec);
    CHECK(pred.spec.dims[0] == 2 * net.cfg.working.dims[0]);
    CHECK(pred.spec.dims[1] == 2 * net.cfg.working.dims[1]);
    CHECK(pred.spec.dims[2] == 2 * net.cfg.working.dims[2]);
    CHECK(pred.spec.voxel_size == doctest::Approx(0.5 * net.cfg.working.voxel_size));
    CHECK(pred.values.size() == data[0].labels.values.size());

    ModelConfig three = tiny_config(87);
    three.n_t = 3;
    SceneCompletionNet<float> net3(three);
    CHECK_THROWS_AS(net3.forward(data[0], ForwardMode::Infer), std::invalid_argument);

    ModelConfig other = tiny_config(87);
    other.working.dims = {8, 8, 8};
    SceneCompletionNet<float> net_other(other);
    CHECK_THROWS_AS(net_other.forward(data[0], ForwardMode::Infer), std::invalid_argument);
}

TEST_CASE("duplicate frames average to the single-frame lifting") {
    auto data1 = tiny_dataset(88, 1, 1);
    Sample dup = data1[0];
    dup.cams.push_back(dup.cams[0]);
    dup.depths.push_back(dup.depths[0]);

    ModelConfig cfg1 = tiny_config(88);
    cfg1.n_t = 1;
    ModelConfig cfg2 = tiny_config(88);
    cfg2.n_t = 2;
    SceneCompletionNet<float> net1(cfg1);
    SceneCompletionNet<float> net2(cfg2);
    CHECK(concat_params(net1) == concat_params(net2));

    auto f1 = net1.forward(data1[0], ForwardMode::Infer).f3d;
    auto f2 = net2.forward(dup, ForwardMode::Infer).f3d;
    REQUIRE(f1->shape == f2->shape);
    CHECK(f1->data == f2->data);
}

TEST_CASE("evaluate_model pools samples and crops ranges") {
    auto data = tiny_dataset(89, 1, 2);
    SceneCompletionNet<float> net(tiny_config(89));

    auto single = evaluate_model(net, data);
    std::vector<Sample> twice = {data[0], data[0]};
    auto doubled = evaluate_model(net, twice);
    CHECK(doubled.full.iou == doctest::Approx(single.full.iou).epsilon(1e-12));
    CHECK(doubled.full.miou == doctest::Approx(single.full.miou).epsilon(1e-12));
    CHECK(doubled.full.valid_total == 2 * single.full.valid_total);

    double extent = tiny_spec().voxel_size * static_cast<double>(tiny_spec().dims[0]);
    auto ranged = evaluate_model(net, data, {extent / 2.0, extent});
    REQUIRE(ranged.ranges.size() == 2);
    CHECK(ranged.ranges[1].metrics.iou == doctest::Approx(single.full.iou).epsilon(1e-12));
    CHECK(ranged.ranges[1].metrics.valid_total == single.full.valid_total);
    CHECK(ranged.ranges[0].metrics.valid_total <= single.full.valid_total);

    auto text = format_metric_report(single.full, default_class_names(net.cfg.c_class));
    CHECK(text.find("IoU") != std::string::npos);
    CHECK(text.find("mIoU") != std::string::npos);
    CHECK(text.find("vegetation") != std::string::npos);
}
