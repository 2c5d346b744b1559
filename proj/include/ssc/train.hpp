#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssc/metrics.hpp"
#include "ssc/model.hpp"
#include "ssc/optim.hpp"
#include "ssc/scene_synth.hpp"

namespace ssc {

namespace detail {

inline void ck_put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

inline void ck_put_u32(std::ostream& os, uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void ck_put_u64(std::ostream& os, uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline uint8_t ck_get_u8(std::istream& is) {
    int c = is.get();
    if (c < 0) throw std::runtime_error("checkpoint: unexpected end of file");
    return static_cast<uint8_t>(c);
}

inline uint32_t ck_get_u32(std::istream& is) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(ck_get_u8(is)) << (8 * i);
    return v;
}

inline uint64_t ck_get_u64(std::istream& is) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(ck_get_u8(is)) << (8 * i);
    return v;
}

template <typename T>
void ck_put_scalar(std::ostream& os, T v) {
    if constexpr (sizeof(T) == 4)
        ck_put_u32(os, std::bit_cast<uint32_t>(v));
    else
        ck_put_u64(os, std::bit_cast<uint64_t>(v));
}

template <typename T>
T ck_get_scalar(std::istream& is) {
    if constexpr (sizeof(T) == 4)
        return std::bit_cast<T>(ck_get_u32(is));
    else
        return std::bit_cast<T>(ck_get_u64(is));
}

constexpr char kCkMagic[4] = {'S', 'S', 'C', 'K'};
constexpr uint32_t kCkVersion = 1;

}  // namespace detail

// Checkpoint contents, decoupled from any live network so a file can be
// inspected (or its config recovered) before a model is constructed.
template <typename T>
struct Checkpoint {
    ModelConfig cfg;
    uint64_t rng_state = 0;
    int64_t step = 0;
    std::vector<std::pair<std::string, std::vector<T>>> params;
    std::vector<std::vector<int64_t>> shapes;
    bool has_optimizer = false;
    int64_t opt_step = 0;
    std::vector<std::vector<T>> m1, m2;
};

template <typename T>
void write_checkpoint(const std::string& path, const Checkpoint<T>& cp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_checkpoint: cannot open " + path);
    os.write(detail::kCkMagic, 4);
    detail::ck_put_u32(os, detail::kCkVersion);
    std::string cfg_text = serialize_config(cp.cfg);
    detail::ck_put_u32(os, static_cast<uint32_t>(cfg_text.size()));
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    detail::ck_put_u64(os, cp.rng_state);
    detail::ck_put_u64(os, static_cast<uint64_t>(cp.step));
    detail::ck_put_u32(os, static_cast<uint32_t>(sizeof(T)));
    detail::ck_put_u32(os, static_cast<uint32_t>(cp.params.size()));
    for (size_t i = 0; i < cp.params.size(); ++i) {
        const auto& [name, data] = cp.params[i];
        detail::ck_put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& dims = cp.shapes[i];
        detail::ck_put_u32(os, static_cast<uint32_t>(dims.size()));
        for (int64_t d : dims) detail::ck_put_u64(os, static_cast<uint64_t>(d));
        for (T v : data) detail::ck_put_scalar<T>(os, v);
    }
    detail::ck_put_u8(os, cp.has_optimizer ? 1 : 0);
    if (cp.has_optimizer) {
        detail::ck_put_u64(os, static_cast<uint64_t>(cp.opt_step));
        for (size_t i = 0; i < cp.params.size(); ++i) {
            for (T v : cp.m1[i]) detail::ck_put_scalar<T>(os, v);
            for (T v : cp.m2[i]) detail::ck_put_scalar<T>(os, v);
        }
    }
    if (!os) throw std::runtime_error("write_checkpoint: write failed for " + path);
}

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string(magic, 4) != std::string(detail::kCkMagic, 4))
        throw std::runtime_error("read_checkpoint: bad magic in " + path);
    uint32_t version = detail::ck_get_u32(is);
    if (version != detail::kCkVersion)
        throw std::runtime_error("read_checkpoint: unsupported version " +
                                 std::to_string(version));
    uint32_t cfg_len = detail::ck_get_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (is.gcount() != static_cast<std::streamsize>(cfg_len))
        throw std::runtime_error("checkpoint: unexpected end of file");

    Checkpoint<T> cp;
    cp.cfg = parse_config_text(cfg_text);
    cp.rng_state = detail::ck_get_u64(is);
    cp.step = static_cast<int64_t>(detail::ck_get_u64(is));
    uint32_t scalar_size = detail::ck_get_u32(is);
    if (scalar_size != sizeof(T))
        throw std::runtime_error("read_checkpoint: scalar width " + std::to_string(scalar_size) +
                                 " does not match requested width " + std::to_string(sizeof(T)));
    uint32_t n_params = detail::ck_get_u32(is);
    cp.params.reserve(n_params);
    cp.shapes.reserve(n_params);
    for (uint32_t i = 0; i < n_params; ++i) {
        uint32_t name_len = detail::ck_get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != static_cast<std::streamsize>(name_len))
            throw std::runtime_error("checkpoint: unexpected end of file");
        uint32_t ndim = detail::ck_get_u32(is);
        std::vector<int64_t> dims(ndim);
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            dims[d] = static_cast<int64_t>(detail::ck_get_u64(is));
            if (dims[d] <= 0) throw std::runtime_error("read_checkpoint: non-positive dimension");
            numel *= dims[d];
        }
        std::vector<T> data(static_cast<size_t>(numel));
        for (auto& v : data) v = detail::ck_get_scalar<T>(is);
        cp.params.emplace_back(std::move(name), std::move(data));
        cp.shapes.push_back(std::move(dims));
    }
    cp.has_optimizer = detail::ck_get_u8(is) != 0;
    if (cp.has_optimizer) {
        cp.opt_step = static_cast<int64_t>(detail::ck_get_u64(is));
        cp.m1.resize(n_params);
        cp.m2.resize(n_params);
        for (uint32_t i = 0; i < n_params; ++i) {
            size_t numel = cp.params[i].second.size();
            cp.m1[i].resize(numel);
            cp.m2[i].resize(numel);
            for (auto& v : cp.m1[i]) v = detail::ck_get_scalar<T>(is);
            for (auto& v : cp.m2[i]) v = detail::ck_get_scalar<T>(is);
        }
    }
    return cp;
}

// One training step: the losses averaged over the accumulation window plus
// seed telemetry. n_above recounts occupancy probabilities exceeding the
// threshold independently of the seed selector, so the two must agree.
template <typename T>
struct StepReport {
    int64_t step = 0;
    T l_geo = 0, l_occ = 0, l_sem = 0, l_ssc = 0, total = 0;
    int64_t n_seeds = 0;
    int64_t n_above = 0;
};

template <typename T>
struct SceneCompletionNet;

template <typename T>
void load_parameters(SceneCompletionNet<T>& net, const Checkpoint<T>& cp);

// Runs optimizer steps over a dataset in deterministic cyclic order. The
// optimizer exists only when the learning rate is positive; with lr == 0 the
// trainer still evaluates losses but provably never touches a parameter.
template <typename T>
class Trainer {
public:
    explicit Trainer(SceneCompletionNet<T>& net)
        : net_(net), rng_(SplitMix64::keyed(net.cfg.seed, "train", 0)) {
        if (net.cfg.lr > 0)
            opt_.emplace(net.params.tensors(), static_cast<T>(net.cfg.lr),
                         static_cast<T>(net.cfg.weight_decay));
    }

    int64_t step_count() const { return step_; }
    uint64_t rng_state() const { return rng_.state(); }

    int64_t total_steps(int64_t n_samples) const {
        return net_.cfg.max_steps > 0 ? net_.cfg.max_steps : net_.cfg.epochs * n_samples;
    }

    StepReport<T> train_step(const std::vector<Sample>& data) {
        if (data.empty()) throw std::invalid_argument("train_step: empty dataset");
        int64_t accum = net_.cfg.accum_steps;
        if (opt_) opt_->zero_grad();
        StepReport<T> rep;
        rep.step = step_ + 1;
        for (int64_t a = 0; a < accum; ++a) {
            const Sample& sample = data[static_cast<size_t>(cursor_ % data.size())];
            ++cursor_;
            auto fwd = net_.forward(sample, ForwardMode::Train);
            auto targets = make_targets(sample);
            auto losses = compute_losses(fwd, targets, net_.cfg);
            auto total = losses.total;
            if (accum > 1) total = scale(total, T(1) / static_cast<T>(accum));
            if (opt_) backward(total);
            rep.l_geo += losses.l_geo->data[0] / static_cast<T>(accum);
            rep.l_occ += losses.l_occ->data[0] / static_cast<T>(accum);
            rep.l_sem += losses.l_sem->data[0] / static_cast<T>(accum);
            rep.l_ssc += losses.l_ssc->data[0] / static_cast<T>(accum);
            rep.total += losses.total->data[0] / static_cast<T>(accum);
            rep.n_seeds += static_cast<int64_t>(fwd.seeds.size());
            for (T p : fwd.occ_probs->data)
                if (p > static_cast<T>(net_.cfg.theta)) ++rep.n_above;
        }
        if (opt_) opt_->step();
        ++step_;
        return rep;
    }

    std::vector<StepReport<T>> run(const std::vector<Sample>& data, std::ostream* log = nullptr,
                                   int64_t log_every = 10) {
        std::vector<StepReport<T>> reports;
        int64_t target = total_steps(static_cast<int64_t>(data.size()));
        while (step_ < target) {
            auto rep = train_step(data);
            if (log && (rep.step % log_every == 0 || rep.step == target)) {
                (*log) << "step " << rep.step << "/" << target << " total " << rep.total
                       << " geo " << rep.l_geo << " occ " << rep.l_occ << " sem " << rep.l_sem
                       << " ssc " << rep.l_ssc << " seeds " << rep.n_seeds << "\n";
                log->flush();
            }
            reports.push_back(rep);
        }
        return reports;
    }

    Checkpoint<T> make_checkpoint() {
        Checkpoint<T> cp;
        cp.cfg = net_.cfg;
        cp.rng_state = rng_.state();
        cp.step = step_;
        for (const auto& [name, t] : net_.params.entries()) {
            cp.params.emplace_back(name, t->data);
            cp.shapes.push_back(t->shape);
        }
        if (opt_) {
            cp.has_optimizer = true;
            cp.opt_step = opt_->step_count();
            cp.m1 = opt_->moment1();
            cp.m2 = opt_->moment2();
        }
        return cp;
    }

    // Restores parameters, optimizer moments, the step counter and the RNG so
    // that the next train_step is bit-identical to an uninterrupted run.
    void restore(const Checkpoint<T>& cp) {
        load_parameters(net_, cp);
        step_ = cp.step;
        cursor_ = cp.step * net_.cfg.accum_steps;
        rng_ = SplitMix64(cp.rng_state);
        if (cp.has_optimizer) {
            if (!opt_)
                throw std::runtime_error(
                    "restore: checkpoint has optimizer state but lr disables the optimizer");
            opt_->set_step_count(cp.opt_step);
            opt_->moment1() = cp.m1;
            opt_->moment2() = cp.m2;
        }
    }

private:
    SceneCompletionNet<T>& net_;
    std::optional<AdamW<T>> opt_;
    SplitMix64 rng_;  // reserved for stochastic schedules; persisted in checkpoints
    int64_t step_ = 0;
    int64_t cursor_ = 0;
};

// Copies checkpoint parameters into a network whose registry must match the
// checkpoint name-for-name and shape-for-shape.
template <typename T>
void load_parameters(SceneCompletionNet<T>& net, const Checkpoint<T>& cp) {
    const auto& entries = net.params.entries();
    if (entries.size() != cp.params.size())
        throw std::runtime_error("load_parameters: checkpoint has " +
                                 std::to_string(cp.params.size()) + " tensors, model has " +
                                 std::to_string(entries.size()));
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& [name, t] = entries[i];
        if (name != cp.params[i].first)
            throw std::runtime_error("load_parameters: tensor " + std::to_string(i) + " is '" +
                                     cp.params[i].first + "' in the checkpoint but '" + name +
                                     "' in the model");
        if (t->shape != cp.shapes[i])
            throw std::runtime_error("load_parameters: shape mismatch for '" + name + "'");
        t->data = cp.params[i].second;
    }
}

inline std::vector<std::string> default_class_names(int64_t c_class) {
    static const std::vector<std::string> kDesk = {"empty",      "road", "building",
                                                   "car",        "vegetation", "pole"};
    if (c_class == static_cast<int64_t>(kDesk.size())) return kDesk;
    std::vector<std::string> names;
    for (int64_t c = 0; c < c_class; ++c) names.push_back("class_" + std::to_string(c));
    return names;
}

struct EvalResult {
    MetricReport full;
    std::vector<RangeReport> ranges;
};

// Dataset-level metrics: predictions and labels from every sample are pooled
// before the intersection/union counts, which matches accumulating a single
// confusion matrix across the dataset.
template <typename T>
EvalResult evaluate_model(const SceneCompletionNet<T>& net, const std::vector<Sample>& data,
                          const std::vector<double>& ranges = {}) {
    if (data.empty()) throw std::invalid_argument("evaluate_model: empty dataset");
    std::vector<uint8_t> all_pred, all_gt;
    std::vector<std::vector<uint8_t>> rng_pred(ranges.size()), rng_gt(ranges.size());
    for (const auto& sample : data) {
        auto pred = net.forward(sample, ForwardMode::Infer).prediction;
        const auto& gt = sample.labels;
        if (pred.values.size() != gt.values.size())
            throw std::runtime_error("evaluate_model: prediction/label size mismatch");
        all_pred.insert(all_pred.end(), pred.values.begin(), pred.values.end());
        all_gt.insert(all_gt.end(), gt.values.begin(), gt.values.end());
        const auto& spec = gt.spec;
        int64_t X = spec.dims[0], Y = spec.dims[1], Z = spec.dims[2];
        for (size_t r = 0; r < ranges.size(); ++r) {
            int64_t x_cells =
                static_cast<int64_t>(std::floor(ranges[r] / spec.voxel_size + 1e-9));
            if (x_cells > X) x_cells = X;
            for (int64_t x = 0; x < x_cells; ++x)
                for (int64_t y = 0; y < Y; ++y)
                    for (int64_t z = 0; z < Z; ++z) {
                        rng_pred[r].push_back(pred.at(x, y, z));
                        rng_gt[r].push_back(gt.at(x, y, z));
                    }
        }
    }
    EvalResult out;
    out.full = iou_miou(all_pred, all_gt, net.cfg.c_class);
    for (size_t r = 0; r < ranges.size(); ++r) {
        RangeReport rr;
        rr.range_m = ranges[r];
        rr.metrics = iou_miou(rng_pred[r], rng_gt[r], net.cfg.c_class);
        out.ranges.push_back(std::move(rr));
    }
    return out;
}

template <typename T>
VoxelGrid<uint8_t> infer_model(const SceneCompletionNet<T>& net, const Sample& sample) {
    return net.forward(sample, ForwardMode::Infer).prediction;
}

}  // namespace ssc
