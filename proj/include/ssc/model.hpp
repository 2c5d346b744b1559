#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/aic.hpp"
#include "ssc/diffusion.hpp"
#include "ssc/guidance.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/nn.hpp"
#include "ssc/proposal.hpp"
#include "ssc/scene_synth.hpp"
#include "ssc/view_transform.hpp"

namespace ssc {

// Every field is addressable in the flat key=value config format; command
// line flags override file values through apply_config_override.
struct ModelConfig {
    uint64_t seed = 1;
    int64_t c = 16;           // volume feature width
    int64_t c_o = 8;          // occupancy-aware feature width
    int64_t c_class = 6;      // classes including empty
    double theta = 0.5;       // seed selection threshold
    int64_t d_mssd = 1;       // diffusion depth
    int64_t n_t = 2;          // temporal frames
    double lr = 2e-4;
    double weight_decay = 1e-2;
    int64_t epochs = 40;
    int64_t max_steps = 0;  // caps epochs * dataset when positive
    int64_t accum_steps = 1;
    int64_t use_sem_loss = 1;  // seed-level semantic supervision on/off
    std::array<int64_t, 3> enc_widths = {8, 16, 32};   // final stage is c
    std::array<int64_t, 3> unet_widths = {8, 16, 32};
    int64_t coarse_width = 16;
    int64_t aspp_width = 8;
    SceneSpec working = SceneSpec::desk_working();

    void validate() const {
        working.validate();
        if (c < 1 || c_o < 1 || c_class < 2 || c_class > 255)
            throw std::invalid_argument("ModelConfig: feature/class widths out of range");
        if (!(theta > 0.0 && theta < 1.0))
            throw std::invalid_argument("ModelConfig: theta must be in (0,1)");
        if (d_mssd < 1) throw std::invalid_argument("ModelConfig: d_mssd must be >= 1");
        if (n_t < 1) throw std::invalid_argument("ModelConfig: n_t must be >= 1");
        if (lr < 0.0) throw std::invalid_argument("ModelConfig: lr must be >= 0");
        if (weight_decay < 0.0) throw std::invalid_argument("ModelConfig: weight_decay must be >= 0");
        if (epochs < 0 || max_steps < 0 || accum_steps < 1)
            throw std::invalid_argument("ModelConfig: schedule fields out of range");
        for (int64_t w : enc_widths)
            if (w < 1) throw std::invalid_argument("ModelConfig: encoder widths must be positive");
        for (int64_t w : unet_widths)
            if (w < 1) throw std::invalid_argument("ModelConfig: refiner widths must be positive");
        if (coarse_width < 1 || aspp_width < 1)
            throw std::invalid_argument("ModelConfig: proposal/diffusion widths must be positive");
    }
};

inline void apply_config_override(ModelConfig& cfg, const std::string& key,
                                  const std::string& value) {
    std::istringstream in(value);
    auto want = [&](auto& field) {
        in >> field;
        if (in.fail() || !(in >> std::ws).eof())
            throw std::invalid_argument("config: bad value '" + value + "' for " + key);
    };
    if (key == "seed") want(cfg.seed);
    else if (key == "c") want(cfg.c);
    else if (key == "c_o") want(cfg.c_o);
    else if (key == "c_class") want(cfg.c_class);
    else if (key == "theta") want(cfg.theta);
    else if (key == "d_mssd") want(cfg.d_mssd);
    else if (key == "n_t") want(cfg.n_t);
    else if (key == "lr") want(cfg.lr);
    else if (key == "weight_decay") want(cfg.weight_decay);
    else if (key == "epochs") want(cfg.epochs);
    else if (key == "max_steps") want(cfg.max_steps);
    else if (key == "accum_steps") want(cfg.accum_steps);
    else if (key == "use_sem_loss") want(cfg.use_sem_loss);
    else if (key == "enc1") want(cfg.enc_widths[0]);
    else if (key == "enc2") want(cfg.enc_widths[1]);
    else if (key == "enc3") want(cfg.enc_widths[2]);
    else if (key == "unet1") want(cfg.unet_widths[0]);
    else if (key == "unet2") want(cfg.unet_widths[1]);
    else if (key == "unet3") want(cfg.unet_widths[2]);
    else if (key == "coarse_width") want(cfg.coarse_width);
    else if (key == "aspp_width") want(cfg.aspp_width);
    else if (key == "spec_ox") want(cfg.working.origin[0]);
    else if (key == "spec_oy") want(cfg.working.origin[1]);
    else if (key == "spec_oz") want(cfg.working.origin[2]);
    else if (key == "spec_s") want(cfg.working.voxel_size);
    else if (key == "spec_x") want(cfg.working.dims[0]);
    else if (key == "spec_y") want(cfg.working.dims[1]);
    else if (key == "spec_z") want(cfg.working.dims[2]);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline ModelConfig parse_config_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: malformed line '" + line + "'");
        apply_config_override(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

inline std::string serialize_config(const ModelConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "seed=" << cfg.seed << "\nc=" << cfg.c << "\nc_o=" << cfg.c_o
        << "\nc_class=" << cfg.c_class << "\ntheta=" << cfg.theta << "\nd_mssd=" << cfg.d_mssd
        << "\nn_t=" << cfg.n_t << "\nlr=" << cfg.lr << "\nweight_decay=" << cfg.weight_decay
        << "\nepochs=" << cfg.epochs << "\nmax_steps=" << cfg.max_steps
        << "\naccum_steps=" << cfg.accum_steps << "\nuse_sem_loss=" << cfg.use_sem_loss
        << "\nenc1=" << cfg.enc_widths[0] << "\nenc2=" << cfg.enc_widths[1]
        << "\nenc3=" << cfg.enc_widths[2] << "\nunet1=" << cfg.unet_widths[0]
        << "\nunet2=" << cfg.unet_widths[1] << "\nunet3=" << cfg.unet_widths[2]
        << "\ncoarse_width=" << cfg.coarse_width << "\naspp_width=" << cfg.aspp_width
        << "\nspec_ox=" << cfg.working.origin[0] << "\nspec_oy=" << cfg.working.origin[1]
        << "\nspec_oz=" << cfg.working.origin[2] << "\nspec_s=" << cfg.working.voxel_size
        << "\nspec_x=" << cfg.working.dims[0] << "\nspec_y=" << cfg.working.dims[1]
        << "\nspec_z=" << cfg.working.dims[2] << "\n";
    return out.str();
}

// Four stride-2 stages bring the image to 1/16 resolution; the last stage
// emits the volume feature width consumed by the view transform.
template <typename T>
struct ImageEncoder {
    std::array<Conv2dLayer<T>, 4> stages;

    ImageEncoder() = default;
    ImageEncoder(ParamRegistry<T>& reg, const std::string& name, int64_t c_in,
                 const std::array<int64_t, 3>& widths, int64_t c_out, SplitMix64& rng) {
        std::array<int64_t, 5> plan = {c_in, widths[0], widths[1], widths[2], c_out};
        for (int i = 0; i < 4; ++i)
            stages[i] = Conv2dLayer<T>(reg, name + ".s" + std::to_string(i), plan[i], plan[i + 1],
                                       3, 2, 1, rng);
    }

    TensorPtr<T> operator()(TensorPtr<T> x) const {
        for (int i = 0; i < 4; ++i) {
            x = stages[i](x);
            if (i < 3) x = relu(x);
        }
        return x;
    }
};

// The appearance stand-in for each frame: a class one-hot of the surface the
// pixel sees (probed from the label grid a short step behind the measured
// depth) plus the depth itself, scaled into unit range by the scene length.
template <typename T>
TensorPtr<T> build_proxy_images(const Sample& sample, int64_t c_class) {
    if (sample.cams.empty() || sample.cams.size() != sample.depths.size())
        throw std::invalid_argument("build_proxy_images: frame lists are inconsistent");
    int64_t n_t = static_cast<int64_t>(sample.cams.size());
    int64_t H = sample.depths[0].height, W = sample.depths[0].width;
    const SceneSpec& out_spec = sample.output_spec;
    double far = out_spec.voxel_size * static_cast<double>(out_spec.dims[0]);
    auto img = make_tensor<T>(Shape{n_t, c_class + 1, H, W});
    int64_t plane = H * W;
    for (int64_t t = 0; t < n_t; ++t) {
        const DepthMap& depth = sample.depths[t];
        if (depth.height != H || depth.width != W)
            throw std::invalid_argument("build_proxy_images: frame sizes differ");
        for (int64_t v = 0; v < H; ++v)
            for (int64_t u = 0; u < W; ++u) {
                double d = depth.at(u, v);
                if (d <= 0.0) continue;
                int64_t base = t * (c_class + 1) * plane + v * W + u;
                img->data[base + c_class * plane] = static_cast<T>(d / far);
                for (double push : {0.3, 0.8}) {
                    auto q = sample.cams[t].back_project(
                        static_cast<double>(u), static_cast<double>(v),
                        d + push * out_spec.voxel_size);
                    auto cell = world_to_voxel(out_spec, q);
                    if (!cell) continue;
                    uint8_t l = sample.labels.at((*cell)[0], (*cell)[1], (*cell)[2]);
                    if (l == 0 || l == kInvalidLabel) continue;
                    if (l >= c_class)
                        throw std::invalid_argument("build_proxy_images: label exceeds c_class");
                    img->data[base + static_cast<int64_t>(l) * plane] = T(1);
                    break;
                }
            }
    }
    return img;
}

enum class ForwardMode { Train, Infer };

template <typename T>
struct ForwardResult {
    TensorPtr<T> f3d;           // [C, X, Y, Z] lifted image features
    TensorPtr<T> occ_logits;    // [X, Y, Z]
    TensorPtr<T> occ_probs;     // sigmoid of the above
    TensorPtr<T> geo_logits;    // [X, Y, Z], train mode only
    std::vector<Coord> seeds;
    TensorPtr<T> seed_logits;   // [C_class, N_s], train mode only
    TensorPtr<T> ssc_logits;    // [C_class, X, Y, Z]
    TensorPtr<T> ssc_probs;     // softmax over classes
    VoxelGrid<uint8_t> prediction;  // argmax upsampled to output resolution
};

template <typename T>
struct SceneCompletionNet {
    ModelConfig cfg;
    ParamRegistry<T> params;
    ImageEncoder<T> encoder;
    CoarseProposal<T> coarse;
    UNetRefiner<T> refiner;
    GeometryHead<T> geometry;
    SemanticGuidance<T> guidance;
    VoxelAggregator<T> aggregator;
    Mssd<T> mssd;

    explicit SceneCompletionNet(const ModelConfig& config) : cfg(config) {
        cfg.validate();
        SplitMix64 rng = SplitMix64::keyed(cfg.seed, "init", 0);
        encoder = ImageEncoder<T>(params, "encoder", cfg.c_class + 1, cfg.enc_widths, cfg.c, rng);
        coarse = CoarseProposal<T>(params, "coarse", cfg.coarse_width, rng);
        refiner = UNetRefiner<T>(params, "refiner", 1, cfg.unet_widths, cfg.c_o, rng);
        geometry = GeometryHead<T>(params, "geometry", cfg.c, rng);
        guidance = SemanticGuidance<T>(params, "guidance", cfg.c, cfg.c_class, rng);
        aggregator = VoxelAggregator<T>(params, "aggregator", cfg.c, cfg.c_o, rng);
        mssd = Mssd<T>(params, "mssd", cfg.c + cfg.c_o, cfg.c_class, cfg.d_mssd, cfg.aspp_width,
                       rng);
    }

    void check_sample(const Sample& sample) const {
        if (!(sample.output_spec == cfg.working.output_scale()))
            throw std::invalid_argument(
                "SceneCompletionNet: sample resolution does not match the working grid");
        if (static_cast<int64_t>(sample.cams.size()) != cfg.n_t)
            throw std::invalid_argument("SceneCompletionNet: sample has " +
                                        std::to_string(sample.cams.size()) + " frames, config " +
                                        std::to_string(cfg.n_t));
    }

    ForwardResult<T> forward(const Sample& sample, ForwardMode mode) const {
        check_sample(sample);
        ForwardResult<T> out;

        auto proxy = build_proxy_images<T>(sample, cfg.c_class);
        auto f2d = encoder(proxy);
        out.f3d = view_transform(f2d, sample.cams, cfg.working).f3d;

        std::vector<std::array<double, 3>> points;
        for (size_t t = 0; t < sample.cams.size(); ++t) {
            auto pts = back_project_depth(sample.depths[t], sample.cams[t]);
            points.insert(points.end(), pts.begin(), pts.end());
        }
        auto occ = refine_occupancy(coarse_occupancy(points, cfg.working, coarse), cfg.working,
                                    refiner);
        out.occ_logits = occ.logits;
        out.occ_probs = occ.probs;

        if (mode == ForwardMode::Train) out.geo_logits = geometry(out.f3d);

        auto seeds = select_seeds(out.occ_probs, out.f3d, static_cast<T>(cfg.theta));
        out.seeds = seeds.coords;
        auto guided = guidance(seeds.feats, seeds.coords, cfg.working.dims,
                               mode == ForwardMode::Train);
        out.seed_logits = guided.logits;

        auto agg = aggregator(guided.fused, seeds.coords, out.f3d, occ.features);
        auto diffused = mssd(agg.fused);
        out.ssc_logits = diffused.logits;
        out.ssc_probs = diffused.probs;

        VoxelGrid<uint8_t> working_pred(cfg.working);
        working_pred.values = argmax_labels(out.ssc_probs);
        out.prediction = upsample_grid(working_pred, 2);
        out.prediction.spec = sample.output_spec;
        return out;
    }
};

// Loss targets at working resolution, derived from the output-resolution
// labels by majority vote.
struct WorkingTargets {
    VoxelGrid<uint8_t> labels;
    std::vector<uint8_t> flat;       // labels.values
    std::vector<uint8_t> occupancy;  // non-empty and valid
    std::vector<uint8_t> valid;      // label != 255
};

inline WorkingTargets make_targets(const Sample& sample) {
    WorkingTargets t;
    t.labels = downsample_labels(sample.labels, 2);
    t.flat = t.labels.values;
    t.occupancy.resize(t.flat.size());
    t.valid.resize(t.flat.size());
    for (size_t i = 0; i < t.flat.size(); ++i) {
        t.valid[i] = t.flat[i] != kInvalidLabel;
        t.occupancy[i] = t.flat[i] != 0 && t.flat[i] != kInvalidLabel;
    }
    return t;
}

template <typename T>
LossReport<T> compute_losses(const ForwardResult<T>& fwd, const WorkingTargets& targets,
                             const ModelConfig& cfg) {
    int64_t n = static_cast<int64_t>(targets.flat.size());
    auto geo_probs = sigmoid(reshape(fwd.geo_logits, Shape{n}));
    auto occ_probs = reshape(fwd.occ_probs, Shape{n});
    auto l_geo = bce_loss(geo_probs, targets.occupancy, targets.valid);
    auto l_occ = bce_loss(occ_probs, targets.occupancy, targets.valid);

    TensorPtr<T> l_sem;
    if (cfg.use_sem_loss != 0) {
        auto seed_y = seed_labels(targets.labels, fwd.seeds);
        auto ce = ce_loss(fwd.seed_logits, seed_y);
        auto lov = lovasz_softmax(softmax(fwd.seed_logits, 0), seed_y);
        l_sem = add(ce, lov);
    } else {
        l_sem = detail::zero_scalar<T>();
    }

    auto l_ssc = ssc_loss(reshape(fwd.ssc_logits, Shape{cfg.c_class, n}), targets.flat);
    return combine_losses(l_geo, l_occ, l_sem, l_ssc);
}

}  // namespace ssc
