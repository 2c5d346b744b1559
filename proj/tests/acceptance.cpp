// End-to-end acceptance harness. Each criterion prints exactly one PASS/FAIL
// line with its measured numbers; the process exits 0 only if every
// criterion holds. All reference values are computed by independent
// brute-force oracles local to this file.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssc/gradcheck_suite.hpp"
#include "ssc/model.hpp"
#include "ssc/train.hpp"

using namespace ssc;
namespace fs = std::filesystem;

namespace {

using clock_t_ = std::chrono::steady_clock;

double seconds_since(clock_t_::time_point t0) {
    return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << std::fixed << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Shared fixture: four desk-scale scenes with fully annotated labels and
// noise-free depth, all six classes present in the pooled data.
// ---------------------------------------------------------------------------

std::vector<Sample> overfit_fixture() {
    SynthParams params;
    params.difficulty = 4;
    params.n_t = 2;
    params.noise_sigma = 0.0;
    params.invalid_prob = 0.0;
    return make_dataset(101, 4, SceneSpec::desk_working(), params);
}

ModelConfig overfit_config(uint64_t seed, int64_t max_steps, bool sem_loss) {
    ModelConfig cfg;
    cfg.seed = seed;
    cfg.lr = 1e-3;
    cfg.max_steps = max_steps;
    cfg.use_sem_loss = sem_loss ? 1 : 0;
    return cfg;
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients match central finite differences for every
// differentiable operation and composite block, at several seeds, quickly.
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
    auto t0 = clock_t_::now();
    double worst = 0.0;
    std::string worst_name = "none";
    int total = 0, failed = 0;
    for (uint64_t seed : {1ull, 7ull, 23ull}) {
        for (const auto& r : run_gradcheck_cases(build_gradcheck_suite(seed), 1e-4)) {
            ++total;
            if (!r.pass) ++failed;
            if (r.max_rel_err > worst) {
                worst = r.max_rel_err;
                worst_name = r.name;
            }
        }
    }
    double secs = seconds_since(t0);
    Outcome o;
    o.pass = failed == 0 && secs < 120.0;
    o.detail = std::to_string(total) + " checks, worst rel err " + fmt(worst, 8) + " (" +
               worst_name + "), " + fmt(secs, 1) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 2: closed-form pieces match brute-force oracles exactly.
// ---------------------------------------------------------------------------

Outcome criterion_closed_form_oracles() {
    int failures = 0;
    std::ostringstream why;

    // Multi-frame fusion weights: 1/hits for seen voxels, 1 otherwise.
    {
        SceneSpec spec;
        spec.origin = {0.0, -3.2, -2.0};
        spec.voxel_size = 0.8;
        spec.dims = {8, 8, 4};
        std::vector<CameraModel> cams = {make_frame_camera(0), make_frame_camera(1),
                                         make_frame_camera(2)};
        auto rng = SplitMix64::keyed(301, "fusion");
        auto f2d = make_tensor<double>({3, 2, 6, 8});
        for (auto& v : f2d->data) v = rng.uniform(-1.0, 1.0);
        auto res = view_transform(f2d, cams, spec);
        int64_t idx = 0;
        for (int64_t x = 0; x < spec.dims[0]; ++x)
            for (int64_t y = 0; y < spec.dims[1]; ++y)
                for (int64_t z = 0; z < spec.dims[2]; ++z, ++idx) {
                    auto c = voxel_center(spec, {x, y, z});
                    int hits = 0;
                    for (const auto& cam : cams)
                        if (cam.project(c).in_fov) ++hits;
                    double expect = hits > 0 ? 1.0 / static_cast<double>(hits) : 1.0;
                    if (res.weights[static_cast<size_t>(idx)] != expect ||
                        res.hit_count[static_cast<size_t>(idx)] != hits)
                        ++failures;
                }
        if (failures) why << "fusion-weight mismatches " << failures << "; ";
    }

    // Seed sets: strict threshold loop in canonical order.
    {
        int bad = 0;
        for (int trial = 0; trial < 20; ++trial) {
            auto rng = SplitMix64::keyed(302, "seedsets", static_cast<uint64_t>(trial));
            int64_t X = 6, Y = 5, Z = 4, C = 3;
            auto probs = make_tensor<float>({X, Y, Z});
            for (auto& v : probs->data) v = static_cast<float>(rng.uniform());
            auto feats = make_tensor<float>({C, X, Y, Z});
            for (auto& v : feats->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            float theta = 0.5f;
            auto sel = select_seeds(probs, feats, theta);
            std::vector<Coord> expect;
            int64_t i = 0;
            for (int64_t x = 0; x < X; ++x)
                for (int64_t y = 0; y < Y; ++y)
                    for (int64_t z = 0; z < Z; ++z, ++i)
                        if (probs->data[i] > theta) expect.push_back({x, y, z});
            if (sel.coords != expect) ++bad;
        }
        failures += bad;
        if (bad) why << "seed-set mismatches " << bad << "; ";
    }

    // Scatter/gather routing: exact placement, zeros elsewhere, round trip.
    {
        int bad = 0;
        auto rng = SplitMix64::keyed(303, "scatter");
        int64_t C = 3, X = 4, Y = 3, Z = 3;
        std::vector<Coord> coords = {{0, 0, 0}, {3, 2, 2}, {1, 1, 0}, {2, 0, 1}};
        auto cols = make_tensor<double>({C, static_cast<int64_t>(coords.size())});
        for (auto& v : cols->data) v = rng.uniform(-2.0, 2.0);
        auto grid = scatter_voxels(cols, coords, X, Y, Z);
        std::vector<double> expect(static_cast<size_t>(C * X * Y * Z), 0.0);
        for (size_t k = 0; k < coords.size(); ++k)
            for (int64_t c = 0; c < C; ++c) {
                int64_t flat = (coords[k][0] * Y + coords[k][1]) * Z + coords[k][2];
                expect[static_cast<size_t>(c * X * Y * Z + flat)] =
                    cols->data[static_cast<size_t>(c * static_cast<int64_t>(coords.size()) +
                                                   static_cast<int64_t>(k))];
            }
        if (grid->data != expect) ++bad;
        auto back = gather_voxels(grid, coords);
        if (back->data != cols->data) ++bad;
        failures += bad;
        if (bad) why << "scatter/gather mismatch; ";
    }

    // Composite semantic loss decomposes into its three parts.
    {
        int bad = 0;
        for (int trial = 0; trial < 10; ++trial) {
            auto rng = SplitMix64::keyed(304, "decomp", static_cast<uint64_t>(trial));
            int64_t C = 4, N = 30;
            auto logits = make_tensor<double>({C, N});
            for (auto& v : logits->data) v = rng.uniform(-2.0, 2.0);
            std::vector<uint8_t> labels(static_cast<size_t>(N));
            for (auto& v : labels) v = static_cast<uint8_t>(rng.uniform_int(0, C - 1));
            labels[0] = 255;
            auto total = ssc_loss(logits, labels);
            auto probs = softmax(logits, 0);
            double parts = scal_loss(probs, labels, ScalMode::Sem)->data[0] +
                           scal_loss(probs, labels, ScalMode::Geo)->data[0] +
                           ce_loss(logits, labels)->data[0];
            if (std::abs(total->data[0] - parts) > 1e-12) ++bad;
        }
        failures += bad;
        if (bad) why << "loss decomposition off " << bad << "; ";
    }

    // Metrics against brute-force confusion counts on random 8^3 grids.
    {
        int bad = 0;
        int64_t nc = 6;
        for (int trial = 0; trial < 100; ++trial) {
            auto rng = SplitMix64::keyed(305, "metrics", static_cast<uint64_t>(trial));
            size_t n = 8 * 8 * 8;
            std::vector<uint8_t> pred(n), gt(n);
            for (auto& v : pred) v = static_cast<uint8_t>(rng.uniform_int(0, nc - 1));
            for (auto& v : gt) {
                int64_t d = rng.uniform_int(0, nc);
                v = d == nc ? uint8_t{255} : static_cast<uint8_t>(d);
            }
            auto rep = iou_miou(pred, gt, nc);
            std::vector<int64_t> tp(static_cast<size_t>(nc)), fp(static_cast<size_t>(nc)),
                fn(static_cast<size_t>(nc));
            int64_t occ_tp = 0, occ_fp = 0, occ_fn = 0, valid = 0;
            for (size_t i = 0; i < n; ++i) {
                if (gt[i] == 255) continue;
                ++valid;
                if (pred[i] == gt[i])
                    ++tp[gt[i]];
                else {
                    ++fp[pred[i]];
                    ++fn[gt[i]];
                }
                bool po = pred[i] != 0, go = gt[i] != 0;
                if (po && go) ++occ_tp;
                if (po && !go) ++occ_fp;
                if (!po && go) ++occ_fn;
            }
            // The mean skips the empty class: it only averages semantic classes.
            double miou_sum = 0.0;
            int64_t counted = 0;
            for (int64_t c = 0; c < nc; ++c) {
                int64_t denom = tp[c] + fp[c] + fn[c];
                if (denom == 0) continue;
                double iou_c = static_cast<double>(tp[c]) / static_cast<double>(denom);
                if (rep.per_class[static_cast<size_t>(c)] != iou_c) ++bad;
                if (c != 0) {
                    miou_sum += iou_c;
                    ++counted;
                }
            }
            double miou = counted ? miou_sum / static_cast<double>(counted) : 0.0;
            double occ_iou =
                occ_tp + occ_fp + occ_fn
                    ? static_cast<double>(occ_tp) / static_cast<double>(occ_tp + occ_fp + occ_fn)
                    : 0.0;
            if (rep.miou != miou || rep.iou != occ_iou || rep.valid_total != valid) ++bad;
        }
        failures += bad;
        if (bad) why << "metric mismatches " << bad << "; ";
    }

    Outcome o;
    o.pass = failures == 0;
    o.detail = failures == 0 ? "fusion weights, seed sets, scatter, loss decomposition, metrics all exact"
                             : why.str();
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 3: loss identities at perfect and uniform predictions.
// ---------------------------------------------------------------------------

Outcome criterion_loss_identities() {
    std::ostringstream why;
    bool ok = true;
    auto expect_le = [&](const char* name, double v, double bound) {
        if (!(v <= bound)) {
            ok = false;
            why << name << "=" << v << " above " << bound << "; ";
        }
    };

    int64_t N = 64, C = 6;
    auto rng = SplitMix64::keyed(310, "identities");
    std::vector<uint8_t> occ(static_cast<size_t>(N)), valid(static_cast<size_t>(N), 1);
    std::vector<uint8_t> labels(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
        labels[static_cast<size_t>(i)] = static_cast<uint8_t>(rng.uniform_int(0, C - 1));
        occ[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] != 0;
    }

    // Perfect confident predictions: probabilities at the clamp, logits at +-30.
    auto perfect_probs = make_tensor<double>({N});
    for (int64_t i = 0; i < N; ++i)
        perfect_probs->data[static_cast<size_t>(i)] = occ[static_cast<size_t>(i)] ? 1.0 : 0.0;
    expect_le("l_geo", bce_loss(perfect_probs, occ, valid)->data[0], 1e-3);
    expect_le("l_occ", bce_loss(perfect_probs, occ, valid)->data[0], 1e-3);

    auto perfect_logits = make_tensor<double>({C, N});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < C; ++c)
            perfect_logits->data[static_cast<size_t>(c * N + i)] =
                c == labels[static_cast<size_t>(i)] ? 30.0 : -30.0;
    double l_sem = ce_loss(perfect_logits, labels)->data[0] +
                   lovasz_softmax(softmax(perfect_logits, 0), labels)->data[0];
    expect_le("l_sem", l_sem, 1e-3);
    expect_le("l_ssc", ssc_loss(perfect_logits, labels)->data[0], 1e-3);

    // Uniform predictions: ln 2 for the binary loss, ln C for cross-entropy.
    auto half = make_tensor<double>({N});
    for (auto& v : half->data) v = 0.5;
    double bce_half = bce_loss(half, occ, valid)->data[0];
    if (std::abs(bce_half - std::log(2.0)) > 1e-9) {
        ok = false;
        why << "uniform binary loss " << bce_half << " vs ln2; ";
    }
    auto zeros = make_tensor<double>({C, N});
    double ce_unif = ce_loss(zeros, labels)->data[0];
    if (std::abs(ce_unif - std::log(static_cast<double>(C))) > 1e-9) {
        ok = false;
        why << "uniform cross-entropy " << ce_unif << " vs lnC; ";
    }

    Outcome o;
    o.pass = ok;
    o.detail = ok ? "perfect predictions <= 1e-3, uniform at ln2 / lnC within 1e-9" : why.str();
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 4: Lovasz and class-affinity losses match exhaustive brute-force
// references on every label pattern with N <= 6.
// ---------------------------------------------------------------------------

double ref_lovasz(const std::vector<double>& probs, int64_t C, int64_t N,
                  const std::vector<uint8_t>& labels) {
    std::vector<int64_t> valid;
    for (int64_t i = 0; i < N; ++i)
        if (labels[static_cast<size_t>(i)] != 255) valid.push_back(i);
    if (valid.empty()) return 0.0;
    std::vector<int64_t> present;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i : valid)
            if (labels[static_cast<size_t>(i)] == c) {
                present.push_back(c);
                break;
            }
    double total = 0.0;
    for (int64_t c : present) {
        int64_t fg = 0;
        for (int64_t i : valid)
            if (labels[static_cast<size_t>(i)] == c) ++fg;
        std::vector<std::pair<double, int64_t>> errs;
        for (int64_t i : valid) {
            double p = probs[static_cast<size_t>(c * N + i)];
            errs.push_back({labels[static_cast<size_t>(i)] == c ? 1.0 - p : p, i});
        }
        std::sort(errs.begin(), errs.end(), [](const auto& a, const auto& b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        int64_t inter = 0, extra = 0;
        double loss_c = 0.0;
        for (size_t j = 0; j < errs.size(); ++j) {
            if (labels[static_cast<size_t>(errs[j].second)] == c)
                ++inter;
            else
                ++extra;
            double jac =
                1.0 - static_cast<double>(fg - inter) / static_cast<double>(fg + extra);
            double next = j + 1 < errs.size() ? errs[j + 1].first : 0.0;
            loss_c += (errs[j].first - next) * jac;
        }
        total += loss_c;
    }
    return total / static_cast<double>(present.size());
}

// Per present class: log-precision, log-recall, and log-specificity of the
// soft class mass, each skipped when its ratio is undefined, averaged over
// the classes that appear among valid labels.
double ref_scal_sem(const std::vector<double>& probs, int64_t C, int64_t N,
                    const std::vector<uint8_t>& labels) {
    std::vector<int64_t> valid;
    for (int64_t i = 0; i < N; ++i)
        if (labels[static_cast<size_t>(i)] != 255) valid.push_back(i);
    if (valid.empty()) return 0.0;
    std::vector<int64_t> present;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i : valid)
            if (labels[static_cast<size_t>(i)] == c) {
                present.push_back(c);
                break;
            }
    double total = 0.0;
    for (int64_t c : present) {
        double hit = 0.0, mass = 0.0, truth = 0.0, miss = 0.0, other = 0.0;
        for (int64_t i : valid) {
            double p = probs[static_cast<size_t>(c * N + i)];
            bool is_c = labels[static_cast<size_t>(i)] == c;
            mass += p;
            if (is_c) {
                hit += p;
                truth += 1.0;
            } else {
                miss += 1.0 - p;
                other += 1.0;
            }
        }
        double acc = 0.0;
        if (mass > 0.0 && hit > 0.0) acc -= std::log(hit / mass);
        if (truth > 0.0 && hit > 0.0) acc -= std::log(hit / truth);
        if (other > 0.0 && miss > 0.0) acc -= std::log(miss / other);
        total += acc;
    }
    return total / static_cast<double>(present.size());
}

// Occupancy form: probability of being non-empty is 1 minus the empty-class
// probability; one precision/recall/specificity triple, zero when the valid
// ground truth holds no occupied voxel.
double ref_scal_geo(const std::vector<double>& probs, int64_t N,
                    const std::vector<uint8_t>& labels) {
    std::vector<int64_t> valid;
    for (int64_t i = 0; i < N; ++i)
        if (labels[static_cast<size_t>(i)] != 255) valid.push_back(i);
    if (valid.empty()) return 0.0;
    bool any_occupied = false;
    for (int64_t i : valid)
        if (labels[static_cast<size_t>(i)] != 0) any_occupied = true;
    if (!any_occupied) return 0.0;
    double hit = 0.0, mass = 0.0, truth = 0.0, miss = 0.0, other = 0.0;
    for (int64_t i : valid) {
        double p = 1.0 - probs[static_cast<size_t>(i)];
        double y = labels[static_cast<size_t>(i)] != 0 ? 1.0 : 0.0;
        hit += p * y;
        mass += p;
        truth += y;
        miss += (1.0 - p) * (1.0 - y);
        other += 1.0 - y;
    }
    double acc = 0.0;
    if (mass > 0.0 && hit > 0.0) acc -= std::log(hit / mass);
    if (truth > 0.0 && hit > 0.0) acc -= std::log(hit / truth);
    if (other > 0.0 && miss > 0.0) acc -= std::log(miss / other);
    return acc;
}

Outcome criterion_exhaustive_losses() {
    int checked = 0, bad = 0;
    double worst = 0.0;
    for (int64_t C : {2, 3}) {
        // Every length-N string over the classes plus the invalid sentinel.
        int64_t alphabet = C + 1;
        for (int64_t N = 1; N <= 6; ++N) {
            int64_t patterns = 1;
            for (int64_t i = 0; i < N; ++i) patterns *= alphabet;
            for (int64_t pat = 0; pat < patterns; ++pat) {
                std::vector<uint8_t> labels(static_cast<size_t>(N));
                int64_t rem = pat;
                for (int64_t i = 0; i < N; ++i) {
                    int64_t sym = rem % alphabet;
                    labels[static_cast<size_t>(i)] =
                        sym == C ? uint8_t{255} : static_cast<uint8_t>(sym);
                    rem /= alphabet;
                }
                auto rng = SplitMix64::keyed(320, "exh",
                                             static_cast<uint64_t>((C * 7 + N) * 1000 + pat));
                auto logits = make_tensor<double>({C, N});
                for (auto& v : logits->data) v = rng.normal();
                auto probs = softmax(logits, 0);

                double lov = lovasz_softmax(probs, labels)->data[0];
                double lov_ref = ref_lovasz(probs->data, C, N, labels);
                double sem = scal_loss(probs, labels, ScalMode::Sem)->data[0];
                double sem_ref = ref_scal_sem(probs->data, C, N, labels);
                double geo = scal_loss(probs, labels, ScalMode::Geo)->data[0];
                double geo_ref = ref_scal_geo(probs->data, N, labels);
                for (double d : {std::abs(lov - lov_ref), std::abs(sem - sem_ref),
                                 std::abs(geo - geo_ref)}) {
                    worst = std::max(worst, d);
                    if (d > 1e-9) ++bad;
                }
                ++checked;
            }
        }
    }
    Outcome o;
    o.pass = bad == 0;
    o.detail = std::to_string(checked) + " label patterns, worst abs diff " + fmt(worst, 12) +
               (bad ? ", " + std::to_string(bad) + " beyond 1e-9" : "");
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 5: projection round trips.
// ---------------------------------------------------------------------------

double surface_distance(const SceneDescription& desc, const std::array<double, 3>& q) {
    double best = 1e30;
    auto box_dist = [&](const std::array<double, 3>& mn, const std::array<double, 3>& mx) {
        double dx = std::max({mn[0] - q[0], q[0] - mx[0], 0.0});
        double dy = std::max({mn[1] - q[1], q[1] - mx[1], 0.0});
        double dz = std::max({mn[2] - q[2], q[2] - mx[2], 0.0});
        double outside = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (outside > 0.0) return outside;
        double inside = std::min({q[0] - mn[0], mx[0] - q[0], q[1] - mn[1], mx[1] - q[1],
                                  q[2] - mn[2], mx[2] - q[2]});
        return inside;
    };
    if (desc.ground_class != 0)
        best = std::min(best, box_dist(desc.box_min, {desc.box_max[0], desc.box_max[1],
                                                      desc.ground_height}));
    for (const auto& b : desc.boxes) best = std::min(best, box_dist(b.min, b.max));
    for (const auto& c : desc.cylinders) {
        double dr = std::hypot(q[0] - c.cx, q[1] - c.cy) - c.radius;
        double dz = std::max(c.z0 - q[2], q[2] - c.z1);
        double d;
        if (dr <= 0.0 && dz <= 0.0)
            d = std::min(-dr, -dz);
        else if (dr > 0.0 && dz > 0.0)
            d = std::hypot(dr, dz);
        else
            d = std::max(dr, dz);
        best = std::min(best, std::abs(d));
    }
    return best;
}

Outcome criterion_geometry_round_trips() {
    std::ostringstream why;
    bool ok = true;

    double worst_px = 0.0;
    auto cam = make_frame_camera(1);
    auto rng = SplitMix64::keyed(330, "roundtrip");
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform(0.0, static_cast<double>(cam.width - 1));
        double v = rng.uniform(0.0, static_cast<double>(cam.height - 1));
        double d = rng.uniform(1.5, 40.0);
        auto p = cam.back_project(u, v, d);
        auto pp = cam.project(p);
        if (!pp.in_fov) {
            ok = false;
            why << "round trip left the field of view; ";
            break;
        }
        worst_px = std::max({worst_px, std::abs(pp.u - u), std::abs(pp.v - v)});
        worst_px = std::max(worst_px, std::abs(pp.depth - d));
    }
    if (worst_px > 1e-6) {
        ok = false;
        why << "pixel round trip err " << worst_px << "; ";
    }

    auto desc = generate_scene(41, SceneSpec::desk_working(), 4);
    double worst_m = 0.0;
    int64_t hits = 0;
    for (int t = 0; t < 2; ++t) {
        auto fcam = make_frame_camera(t);
        auto depth = render_depth(desc, fcam);
        for (int64_t v = 0; v < fcam.height; ++v)
            for (int64_t u = 0; u < fcam.width; ++u) {
                double d = depth.at(u, v);
                if (d <= 0.0) continue;
                ++hits;
                auto q = fcam.back_project(static_cast<double>(u), static_cast<double>(v), d);
                worst_m = std::max(worst_m, surface_distance(desc, q));
            }
    }
    if (worst_m > 1e-6 || hits == 0) {
        ok = false;
        why << "depth surface err " << worst_m << " over " << hits << " rays; ";
    }

    Outcome o;
    o.pass = ok;
    o.detail = ok ? "10k pixel round trips <= " + fmt(worst_px, 9) + " px, " +
                        std::to_string(hits) + " depth rays <= " + fmt(worst_m, 9) + " m"
                  : why.str();
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 6: seed sets shrink and stay nested as the threshold rises.
// ---------------------------------------------------------------------------

Outcome criterion_threshold_monotonicity() {
    int bad = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto rng = SplitMix64::keyed(340, "sweep", static_cast<uint64_t>(trial));
        int64_t X = 7, Y = 6, Z = 4;
        auto probs = make_tensor<float>({X, Y, Z});
        for (auto& v : probs->data) v = static_cast<float>(rng.uniform());
        auto feats = make_tensor<float>({2, X, Y, Z});
        for (auto& v : feats->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

        std::vector<std::vector<Coord>> sets;
        for (int k = 1; k <= 9; ++k)
            sets.push_back(select_seeds(probs, feats, static_cast<float>(k) * 0.1f).coords);
        for (size_t s = 1; s < sets.size(); ++s) {
            if (sets[s].size() > sets[s - 1].size()) ++bad;
            for (const auto& c : sets[s])
                if (std::find(sets[s - 1].begin(), sets[s - 1].end(), c) == sets[s - 1].end())
                    ++bad;
        }
    }
    Outcome o;
    o.pass = bad == 0;
    o.detail = bad == 0 ? "20 fields x 9 thresholds: counts non-increasing, sets nested"
                        : std::to_string(bad) + " monotonicity violations";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 7: the desk fixture overfits within the step and time budget.
// ---------------------------------------------------------------------------

Outcome criterion_overfit(EvalResult& final_eval, std::vector<Sample>& fixture_out) {
    auto t0 = clock_t_::now();
    auto data = overfit_fixture();
    fixture_out = data;
    ModelConfig cfg = overfit_config(1, 1000, true);
    SceneCompletionNet<float> net(cfg);
    Trainer<float> trainer(net);

    int64_t steps_done = 0;
    EvalResult ev;
    while (steps_done < cfg.max_steps) {
        for (int i = 0; i < 100 && steps_done < cfg.max_steps; ++i) {
            trainer.train_step(data);
            ++steps_done;
        }
        ev = evaluate_model(net, data);
        if (ev.full.iou >= 0.90 && ev.full.miou >= 0.85) break;
    }
    double secs = seconds_since(t0);
    final_eval = ev;

    Outcome o;
    o.pass = ev.full.iou >= 0.90 && ev.full.miou >= 0.85 && secs < 900.0;
    o.detail = "IoU " + fmt(ev.full.iou) + ", mIoU " + fmt(ev.full.miou) + " after " +
               std::to_string(steps_done) + " steps in " + fmt(secs, 1) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 8: the seed-level semantic loss does not hurt; its mean train
// mIoU over three seeds is at least the mean without it.
// ---------------------------------------------------------------------------

Outcome criterion_ablation(const std::vector<Sample>& data) {
    auto t0 = clock_t_::now();
    auto run_once = [&](uint64_t seed, bool sem) {
        ModelConfig cfg = overfit_config(seed, 500, sem);
        SceneCompletionNet<float> net(cfg);
        Trainer<float> trainer(net);
        trainer.run(data, nullptr);
        return evaluate_model(net, data).full.miou;
    };
    double mean_on = 0.0, mean_off = 0.0;
    std::ostringstream runs;
    for (uint64_t seed : {201ull, 202ull, 203ull}) {
        double on = run_once(seed, true);
        double off = run_once(seed, false);
        mean_on += on / 3.0;
        mean_off += off / 3.0;
        runs << " s" << seed << " " << fmt(on) << "/" << fmt(off);
    }
    double secs = seconds_since(t0);
    Outcome o;
    o.pass = mean_on >= mean_off && secs < 2700.0;
    o.detail = "mean mIoU with/without seed supervision " + fmt(mean_on) + "/" + fmt(mean_off) +
               " (" + runs.str() + " ) in " + fmt(secs, 1) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism and persistence.
// ---------------------------------------------------------------------------

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

Outcome criterion_determinism(const std::vector<Sample>& data) {
    std::ostringstream why;
    bool ok = true;
    fs::path tmp = fs::temp_directory_path() / "ssc_acceptance";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    ModelConfig cfg = overfit_config(77, 3, true);
    auto run_and_save = [&](const std::string& name) {
        SceneCompletionNet<float> net(cfg);
        Trainer<float> trainer(net);
        trainer.run(data, nullptr);
        write_checkpoint((tmp / name).string(), trainer.make_checkpoint());
    };
    run_and_save("a.ckpt");
    run_and_save("b.ckpt");
    if (slurp((tmp / "a.ckpt").string()) != slurp((tmp / "b.ckpt").string())) {
        ok = false;
        why << "repeated training checkpoints differ; ";
    }

    auto cp = read_checkpoint<float>((tmp / "a.ckpt").string());
    write_checkpoint((tmp / "a2.ckpt").string(), cp);
    if (slurp((tmp / "a.ckpt").string()) != slurp((tmp / "a2.ckpt").string())) {
        ok = false;
        why << "checkpoint read/write round trip differs; ";
    }

    {
        auto rng = SplitMix64::keyed(350, "vgrid");
        SceneSpec spec;
        spec.origin = {0.0, -3.2, -2.0};
        spec.voxel_size = 0.8;
        spec.dims = {5, 4, 3};
        VoxelGrid<uint8_t> g8(spec);
        for (auto& v : g8.values) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
        VoxelGrid<uint16_t> g16(spec);
        for (auto& v : g16.values) v = static_cast<uint16_t>(rng.uniform_int(0, 65535));
        VoxelGrid<float> gf(spec);
        for (auto& v : gf.values) v = static_cast<float>(rng.uniform(-10.0, 10.0));
        write_vgrid((tmp / "a.vgrd").string(), g8);
        write_vgrid((tmp / "b.vgrd").string(), g16);
        write_vgrid((tmp / "c.vgrd").string(), gf);
        auto r8 = read_vgrid_u8((tmp / "a.vgrd").string());
        auto r16 = read_vgrid_u16((tmp / "b.vgrd").string());
        auto rf = read_vgrid_f32((tmp / "c.vgrd").string());
        write_vgrid((tmp / "a2.vgrd").string(), r8);
        write_vgrid((tmp / "b2.vgrd").string(), r16);
        write_vgrid((tmp / "c2.vgrd").string(), rf);
        if (r8.values != g8.values || r16.values != g16.values || rf.values != gf.values ||
            slurp((tmp / "a.vgrd").string()) != slurp((tmp / "a2.vgrd").string()) ||
            slurp((tmp / "b.vgrd").string()) != slurp((tmp / "b2.vgrd").string()) ||
            slurp((tmp / "c.vgrd").string()) != slurp((tmp / "c2.vgrd").string())) {
            ok = false;
            why << "voxel grid round trip differs; ";
        }
    }

    {
        SceneCompletionNet<float> net(cfg);
        auto train_pred = net.forward(data[0], ForwardMode::Train).prediction;
        auto infer_pred = net.forward(data[0], ForwardMode::Infer).prediction;
        if (train_pred.values != infer_pred.values) {
            ok = false;
            why << "prediction depends on training-only heads; ";
        }
        if (net.forward(data[0], ForwardMode::Infer).geo_logits != nullptr) {
            ok = false;
            why << "inference still builds training-only heads; ";
        }
    }

    fs::remove_all(tmp);
    Outcome o;
    o.pass = ok;
    o.detail = ok ? "repeated runs, checkpoint and grid round trips, and pruned-head inference "
                    "all bit-identical"
                  : why.str();
    return o;
}

}  // namespace

int main() {
    auto t0 = clock_t_::now();
    bool all = true;
    std::vector<Sample> fixture;
    EvalResult overfit_eval;

    auto report = [&](int num, const std::string& name, Outcome o) {
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << num << " " << name << ": " << o.detail
                  << std::endl;
        all = all && o.pass;
    };

    report(1, "gradient finite differences", criterion_gradients());
    report(2, "closed-form oracles", criterion_closed_form_oracles());
    report(3, "loss identities", criterion_loss_identities());
    report(4, "exhaustive small-input losses", criterion_exhaustive_losses());
    report(5, "geometry round trips", criterion_geometry_round_trips());
    report(6, "threshold monotonicity", criterion_threshold_monotonicity());
    report(7, "desk overfit budget", criterion_overfit(overfit_eval, fixture));
    report(8, "seed supervision ablation", criterion_ablation(fixture));
    report(9, "determinism and persistence", criterion_determinism(fixture));

    std::cout << (all ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED") << " in "
              << fmt(seconds_since(t0), 1) << " s" << std::endl;
    return all ? 0 : 1;
}
