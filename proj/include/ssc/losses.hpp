#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

namespace detail {

inline void warn_degenerate(const char* what) {
    std::fprintf(stderr, "warning: %s, loss is 0\n", what);
}

template <typename T>
TensorPtr<T> zero_scalar() {
    return make_tensor<T>(Shape{1});
}

}  // namespace detail

// Mean binary cross-entropy over masked entries. Probabilities are clamped
// to [eps, 1-eps] before the logs; entries outside the clamp range carry no
// gradient.
template <typename T>
TensorPtr<T> bce_loss(const TensorPtr<T>& probs, const std::vector<uint8_t>& targets,
                      const std::vector<uint8_t>& mask, T eps = T(1e-7)) {
    size_t n = probs->data.size();
    if (targets.size() != n || mask.size() != n)
        throw std::invalid_argument("bce_loss: " + std::to_string(n) + " probabilities vs " +
                                    std::to_string(targets.size()) + " targets and " +
                                    std::to_string(mask.size()) + " mask entries");
    int64_t m = 0;
    for (size_t i = 0; i < n; ++i)
        if (mask[i]) ++m;
    if (m == 0) {
        detail::warn_degenerate("bce_loss: empty mask");
        return detail::zero_scalar<T>();
    }
    T inv_m = T(1) / static_cast<T>(m);
    auto out = make_op_output<T>(
        Shape{1}, {probs}, [probs, targets, mask, n, inv_m, eps](const Tensor<T>& o) {
            if (!probs->requires_grad) return;
            T g0 = o.grad[0];
            for (size_t i = 0; i < n; ++i) {
                if (!mask[i]) continue;
                T p = probs->data[i];
                if (p < eps || p > T(1) - eps) continue;  // clamp region: flat
                T y = targets[i] ? T(1) : T(0);
                probs->grad[i] += g0 * inv_m * (p - y) / (p * (T(1) - p));
            }
        });
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        T p = std::min(std::max(probs->data[i], eps), T(1) - eps);
        acc += targets[i] ? -std::log(p) : -std::log(T(1) - p);
    }
    out->data[0] = acc * inv_m;
    return out;
}

// Mean negative log-softmax at the true class over entries whose label is
// not the invalid sentinel. logits are [C, N].
template <typename T>
TensorPtr<T> ce_loss(const TensorPtr<T>& logits, const std::vector<uint8_t>& labels) {
    if (logits->ndim() != 2)
        throw std::invalid_argument("ce_loss: logits must be [C,N], got " + shape_str(logits->shape));
    int64_t C = logits->shape[0], N = logits->shape[1];
    if (static_cast<int64_t>(labels.size()) != N)
        throw std::invalid_argument("ce_loss: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(N) + " entries");
    for (int64_t i = 0; i < N; ++i)
        if (labels[i] != kInvalidLabel && labels[i] >= C)
            throw std::invalid_argument("ce_loss: label " + std::to_string(labels[i]) +
                                        " at entry " + std::to_string(i) + " outside " +
                                        std::to_string(C) + " classes");
    int64_t m = 0;
    for (int64_t i = 0; i < N; ++i)
        if (labels[i] != kInvalidLabel) ++m;
    if (m == 0) {
        detail::warn_degenerate("ce_loss: all labels invalid");
        return detail::zero_scalar<T>();
    }
    T inv_m = T(1) / static_cast<T>(m);
    // softmax per column, stashed for the backward pass
    std::vector<T> soft(static_cast<size_t>(C * N));
    for (int64_t i = 0; i < N; ++i) {
        T mx = logits->data[i];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, logits->data[c * N + i]);
        T denom = T(0);
        for (int64_t c = 0; c < C; ++c) {
            T e = std::exp(logits->data[c * N + i] - mx);
            soft[c * N + i] = e;
            denom += e;
        }
        for (int64_t c = 0; c < C; ++c) soft[c * N + i] /= denom;
    }
    auto out = make_op_output<T>(
        Shape{1}, {logits}, [logits, labels, soft, C, N, inv_m](const Tensor<T>& o) {
            if (!logits->requires_grad) return;
            T g0 = o.grad[0];
            for (int64_t i = 0; i < N; ++i) {
                if (labels[i] == kInvalidLabel) continue;
                for (int64_t c = 0; c < C; ++c) {
                    T onehot = (c == labels[i]) ? T(1) : T(0);
                    logits->grad[c * N + i] += g0 * inv_m * (soft[c * N + i] - onehot);
                }
            }
        });
    T acc = T(0);
    for (int64_t i = 0; i < N; ++i) {
        if (labels[i] == kInvalidLabel) continue;
        acc -= std::log(soft[labels[i] * N + i]);
    }
    out->data[0] = acc * inv_m;
    return out;
}

// Lovasz-softmax: the convex Lovasz extension of the per-class Jaccard loss,
// averaged over classes present in the (valid) ground truth. probs are
// per-entry distributions [C, N].
template <typename T>
TensorPtr<T> lovasz_softmax(const TensorPtr<T>& probs, const std::vector<uint8_t>& labels) {
    if (probs->ndim() != 2)
        throw std::invalid_argument("lovasz_softmax: probs must be [C,N], got " +
                                    shape_str(probs->shape));
    int64_t C = probs->shape[0], N = probs->shape[1];
    if (static_cast<int64_t>(labels.size()) != N)
        throw std::invalid_argument("lovasz_softmax: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(N) + " entries");
    std::vector<int64_t> valid;
    for (int64_t i = 0; i < N; ++i)
        if (labels[i] != kInvalidLabel) {
            if (labels[i] >= C)
                throw std::invalid_argument("lovasz_softmax: label " + std::to_string(labels[i]) +
                                            " at entry " + std::to_string(i) + " outside " +
                                            std::to_string(C) + " classes");
            valid.push_back(i);
        }
    if (valid.empty()) {
        detail::warn_degenerate("lovasz_softmax: no valid entries");
        return detail::zero_scalar<T>();
    }
    std::vector<int64_t> present;
    for (int64_t c = 0; c < C; ++c) {
        bool any = false;
        for (int64_t i : valid)
            if (labels[i] == c) any = true;
        if (any) present.push_back(c);
    }
    int64_t v = static_cast<int64_t>(valid.size());

    // Per class: errors e_i = 1 - p (foreground) / p (background), sorted
    // descending; the loss is <e_sorted, g> where g is the discrete gradient
    // of the Jaccard extension along the sorted ground-truth sequence.
    // d(loss)/d(e_i) = g at i's sorted position, so the whole op is linear
    // in the error vector between sort-order changes.
    T loss = T(0);
    std::vector<T> dprobs(static_cast<size_t>(C * N), T(0));
    T inv_present = T(1) / static_cast<T>(present.size());
    std::vector<std::pair<T, int64_t>> order(static_cast<size_t>(v));
    for (int64_t c : present) {
        for (int64_t j = 0; j < v; ++j) {
            int64_t i = valid[j];
            bool fg = labels[i] == c;
            T p = probs->data[c * N + i];
            order[j] = {fg ? T(1) - p : p, i};
        }
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        int64_t total_fg = 0;
        for (int64_t i : valid)
            if (labels[i] == c) ++total_fg;
        // jaccard_j = 1 - inter_j / union_j over the first j sorted entries
        T prev = T(0);
        int64_t fg_seen = 0;
        for (int64_t j = 0; j < v; ++j) {
            bool fg = labels[order[j].second] == c;
            if (fg) ++fg_seen;
            T inter = static_cast<T>(total_fg - fg_seen);
            T uni = static_cast<T>(total_fg + (j + 1 - fg_seen));
            T jac = T(1) - inter / uni;
            T g = jac - prev;
            prev = jac;
            loss += order[j].first * g * inv_present;
            T sign = fg ? T(-1) : T(1);
            dprobs[c * N + order[j].second] += sign * g * inv_present;
        }
    }
    auto out = make_op_output<T>(
        Shape{1}, {probs}, [probs, dprobs](const Tensor<T>& o) {
            if (!probs->requires_grad) return;
            T g0 = o.grad[0];
            for (size_t i = 0; i < dprobs.size(); ++i) probs->grad[i] += g0 * dprobs[i];
        });
    out->data[0] = loss;
    return out;
}

enum class ScalMode { Sem, Geo };

// Scene-class affinity: negative logs of soft precision, recall, and
// specificity per class present in the valid ground truth, averaged over
// those classes. Sem mode scores every semantic class on its own
// probability row; geo mode scores the single binary occupancy signal with
// p(occupied) = 1 - p(empty class 0).
template <typename T>
TensorPtr<T> scal_loss(const TensorPtr<T>& probs, const std::vector<uint8_t>& labels,
                       ScalMode mode) {
    if (probs->ndim() != 2)
        throw std::invalid_argument("scal_loss: probs must be [C,N], got " + shape_str(probs->shape));
    int64_t C = probs->shape[0], N = probs->shape[1];
    if (static_cast<int64_t>(labels.size()) != N)
        throw std::invalid_argument("scal_loss: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(N) + " entries");
    std::vector<int64_t> valid;
    for (int64_t i = 0; i < N; ++i)
        if (labels[i] != kInvalidLabel) {
            if (labels[i] >= C)
                throw std::invalid_argument("scal_loss: label " + std::to_string(labels[i]) +
                                            " at entry " + std::to_string(i) + " outside " +
                                            std::to_string(C) + " classes");
            valid.push_back(i);
        }
    if (valid.empty()) {
        detail::warn_degenerate("scal_loss: no valid entries");
        return detail::zero_scalar<T>();
    }

    // Evaluate one binary affinity channel; returns the number of log terms
    // used and accumulates d(sum of logs)/d(p_i) into dp (indexed by the
    // valid-entry position).
    struct Channel {
        std::vector<T> p;    // channel probability per valid entry
        std::vector<T> y;    // channel target per valid entry
    };
    auto eval = [](const Channel& ch, std::vector<T>& dp, T& acc) {
        int64_t n = static_cast<int64_t>(ch.p.size());
        T a = T(0), b = T(0), yy = T(0), d = T(0), e = T(0);
        for (int64_t i = 0; i < n; ++i) {
            a += ch.p[i] * ch.y[i];
            b += ch.p[i];
            yy += ch.y[i];
            d += (T(1) - ch.p[i]) * (T(1) - ch.y[i]);
            e += T(1) - ch.y[i];
        }
        // precision: log(a/b), recall: log(a/yy), specificity: log(d/e);
        // a term with a zero denominator is undefined and skipped, and a
        // zero numerator (possible when probabilities underflow) is skipped
        // too so the loss stays finite.
        if (b > T(0) && a > T(0)) {
            acc -= std::log(a / b);
            for (int64_t i = 0; i < n; ++i) dp[i] -= ch.y[i] / a - T(1) / b;
        }
        if (yy > T(0) && a > T(0)) {
            acc -= std::log(a / yy);
            for (int64_t i = 0; i < n; ++i) dp[i] -= ch.y[i] / a;
        }
        if (e > T(0) && d > T(0)) {
            acc -= std::log(d / e);
            for (int64_t i = 0; i < n; ++i) dp[i] -= -(T(1) - ch.y[i]) / d;
        }
    };

    int64_t v = static_cast<int64_t>(valid.size());
    std::vector<T> dprobs(static_cast<size_t>(C * N), T(0));
    T loss = T(0);

    if (mode == ScalMode::Geo) {
        Channel ch;
        ch.p.resize(v);
        ch.y.resize(v);
        for (int64_t j = 0; j < v; ++j) {
            ch.p[j] = T(1) - probs->data[0 * N + valid[j]];
            ch.y[j] = labels[valid[j]] != 0 ? T(1) : T(0);
        }
        bool present = false;
        for (int64_t j = 0; j < v; ++j)
            if (ch.y[j] > T(0)) present = true;
        if (!present) {
            detail::warn_degenerate("scal_loss: no occupied voxels in ground truth");
            return detail::zero_scalar<T>();
        }
        std::vector<T> dp(v, T(0));
        eval(ch, dp, loss);
        // p(occ) = 1 - p(empty): the chain rule flips the sign onto row 0
        for (int64_t j = 0; j < v; ++j) dprobs[0 * N + valid[j]] = -dp[j];
    } else {
        std::vector<int64_t> present;
        for (int64_t c = 0; c < C; ++c) {
            bool any = false;
            for (int64_t i : valid)
                if (labels[i] == c) any = true;
            if (any) present.push_back(c);
        }
        T inv_present = T(1) / static_cast<T>(present.size());
        for (int64_t c : present) {
            Channel ch;
            ch.p.resize(v);
            ch.y.resize(v);
            for (int64_t j = 0; j < v; ++j) {
                ch.p[j] = probs->data[c * N + valid[j]];
                ch.y[j] = labels[valid[j]] == c ? T(1) : T(0);
            }
            std::vector<T> dp(v, T(0));
            T acc = T(0);
            eval(ch, dp, acc);
            loss += acc * inv_present;
            for (int64_t j = 0; j < v; ++j) dprobs[c * N + valid[j]] += dp[j] * inv_present;
        }
    }

    auto out = make_op_output<T>(
        Shape{1}, {probs}, [probs, dprobs](const Tensor<T>& o) {
            if (!probs->requires_grad) return;
            T g0 = o.grad[0];
            for (size_t i = 0; i < dprobs.size(); ++i) probs->grad[i] += g0 * dprobs[i];
        });
    out->data[0] = loss;
    return out;
}

// Full segmentation objective at working resolution:
// semantic affinity + geometric affinity + cross-entropy, over logits [C, N].
template <typename T>
TensorPtr<T> ssc_loss(const TensorPtr<T>& logits, const std::vector<uint8_t>& labels) {
    auto probs = softmax(logits, 0);
    auto sem = scal_loss(probs, labels, ScalMode::Sem);
    auto geo = scal_loss(probs, labels, ScalMode::Geo);
    auto ce = ce_loss(logits, labels);
    return add(add(sem, geo), ce);
}

template <typename T>
struct LossReport {
    TensorPtr<T> l_geo, l_occ, l_sem, l_ssc, total;
};

template <typename T>
LossReport<T> combine_losses(TensorPtr<T> l_geo, TensorPtr<T> l_occ, TensorPtr<T> l_sem,
                             TensorPtr<T> l_ssc) {
    LossReport<T> r;
    r.l_geo = l_geo;
    r.l_occ = l_occ;
    r.l_sem = l_sem;
    r.l_ssc = l_ssc;
    r.total = add(add(add(l_geo, l_occ), l_sem), l_ssc);
    return r;
}

}  // namespace ssc
