#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

using Coord = std::array<int64_t, 3>;

enum class Axis { X = 0, Y = 1, Z = 2 };

inline const char* axis_name(Axis a) {
    switch (a) {
        case Axis::X: return "x";
        case Axis::Y: return "y";
        default: return "z";
    }
}

namespace detail {

template <typename T>
inline void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

// Valid tap range [klo, khi] so that base + k*dil lands in [0, extent).
inline void tap_range(int64_t base, int64_t extent, int64_t taps, int64_t dil, int64_t& klo,
                      int64_t& khi) {
    klo = 0;
    khi = taps - 1;
    if (base < 0) klo = (-base + dil - 1) / dil;
    int64_t last = extent - 1 - base;
    if (last < 0)
        khi = -1;
    else if (khi * dil > last)
        khi = last / dil;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape("add", *a, *b);
    auto out = make_op_output<T>(
        a->shape, {a, b}, [a, b](const Tensor<T>& o) {
            if (a->requires_grad)
                for (int64_t i = 0; i < o.numel(); ++i) a->grad[i] += o.grad[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < o.numel(); ++i) b->grad[i] += o.grad[i];
        });
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape("sub", *a, *b);
    auto out = make_op_output<T>(
        a->shape, {a, b}, [a, b](const Tensor<T>& o) {
            if (a->requires_grad)
                for (int64_t i = 0; i < o.numel(); ++i) a->grad[i] += o.grad[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < o.numel(); ++i) b->grad[i] -= o.grad[i];
        });
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
    return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_same_shape("mul", *a, *b);
    auto out = make_op_output<T>(
        a->shape, {a, b}, [a, b](const Tensor<T>& o) {
            if (a->requires_grad)
                for (int64_t i = 0; i < o.numel(); ++i) a->grad[i] += o.grad[i] * b->data[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < o.numel(); ++i) b->grad[i] += o.grad[i] * a->data[i];
        });
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    return out;
}

// Multiply by a compile-time-known constant.
template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& x, T c) {
    auto out = make_op_output<T>(
        x->shape, {x}, [x, c](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t i = 0; i < o.numel(); ++i) x->grad[i] += c * o.grad[i];
        });
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = c * x->data[i];
    return out;
}

// Multiply a tensor by a scalar tensor (numel 1), e.g. a learned mixture weight.
template <typename T>
TensorPtr<T> scalar_mul(const TensorPtr<T>& s, const TensorPtr<T>& x) {
    if (s->numel() != 1)
        throw std::invalid_argument("scalar_mul: scale tensor must have one element, got shape " +
                                    shape_str(s->shape));
    auto out = make_op_output<T>(
        x->shape, {s, x}, [s, x](const Tensor<T>& o) {
            if (s->requires_grad) {
                T acc = T(0);
                for (int64_t i = 0; i < o.numel(); ++i) acc += o.grad[i] * x->data[i];
                s->grad[0] += acc;
            }
            if (x->requires_grad) {
                T sv = s->data[0];
                for (int64_t i = 0; i < o.numel(); ++i) x->grad[i] += sv * o.grad[i];
            }
        });
    T sv = s->data[0];
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = sv * x->data[i];
    return out;
}

// Extracts one element (by flat index) as a scalar tensor.
template <typename T>
TensorPtr<T> index_scalar(const TensorPtr<T>& x, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= x->numel())
        throw std::invalid_argument("index_scalar: index " + std::to_string(flat_index) +
                                    " out of range for " + std::to_string(x->numel()) + " elements");
    auto out = make_op_output<T>(
        Shape{1}, {x}, [x, flat_index](const Tensor<T>& o) {
            if (x->requires_grad) x->grad[flat_index] += o.grad[0];
        });
    out->data[0] = x->data[flat_index];
    return out;
}

template <typename T>
TensorPtr<T> add_n(const std::vector<TensorPtr<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("add_n: empty input list");
    for (const auto& x : xs) detail::require_same_shape("add_n", *xs[0], *x);
    auto out = make_op_output<T>(
        xs[0]->shape, xs, [xs](const Tensor<T>& o) {
            for (const auto& x : xs) {
                if (!x->requires_grad) continue;
                for (int64_t i = 0; i < o.numel(); ++i) x->grad[i] += o.grad[i];
            }
        });
    for (int64_t i = 0; i < out->numel(); ++i) {
        T acc = T(0);
        for (const auto& x : xs) acc += x->data[i];
        out->data[i] = acc;
    }
    return out;
}

// Copy with a new shape; element order is preserved.
template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x->numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x->shape) + " as " +
                                    shape_str(new_shape));
    auto out = make_op_output<T>(
        std::move(new_shape), {x}, [x](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t i = 0; i < o.numel(); ++i) x->grad[i] += o.grad[i];
        });
    out->data = x->data;
    return out;
}

// ---------------------------------------------------------------------------
// Activations and reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
    auto out = make_op_output<T>(
        x->shape, {x}, [x](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t i = 0; i < o.numel(); ++i)
                if (x->data[i] > T(0)) x->grad[i] += o.grad[i];
        });
    for (int64_t i = 0; i < out->numel(); ++i)
        out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    return out;
}

template <typename T>
TensorPtr<T> sigmoid(const TensorPtr<T>& x) {
    auto out = make_op_output<T>(
        x->shape, {x}, [x](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t i = 0; i < o.numel(); ++i) {
                T y = o.data[i];
                x->grad[i] += o.grad[i] * y * (T(1) - y);
            }
        });
    for (int64_t i = 0; i < out->numel(); ++i) {
        T v = x->data[i];
        out->data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                 : std::exp(v) / (T(1) + std::exp(v));
    }
    return out;
}

template <typename T>
TensorPtr<T> softmax(const TensorPtr<T>& x, int axis) {
    if (axis < 0 || axis >= x->ndim())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(x->shape));
    int64_t alen = x->shape[axis];
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < x->ndim(); ++i) inner *= x->shape[i];
    for (int i = 0; i < axis; ++i) outer *= x->shape[i];
    auto out = make_op_output<T>(
        x->shape, {x}, [x, alen, inner, outer](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t ou = 0; ou < outer; ++ou)
                for (int64_t in = 0; in < inner; ++in) {
                    int64_t base = ou * alen * inner + in;
                    T dot = T(0);
                    for (int64_t a = 0; a < alen; ++a) {
                        int64_t i = base + a * inner;
                        dot += o.grad[i] * o.data[i];
                    }
                    for (int64_t a = 0; a < alen; ++a) {
                        int64_t i = base + a * inner;
                        x->grad[i] += o.data[i] * (o.grad[i] - dot);
                    }
                }
        });
    for (int64_t ou = 0; ou < outer; ++ou)
        for (int64_t in = 0; in < inner; ++in) {
            int64_t base = ou * alen * inner + in;
            T mx = x->data[base];
            for (int64_t a = 1; a < alen; ++a) mx = std::max(mx, x->data[base + a * inner]);
            T denom = T(0);
            for (int64_t a = 0; a < alen; ++a) {
                T e = std::exp(x->data[base + a * inner] - mx);
                out->data[base + a * inner] = e;
                denom += e;
            }
            for (int64_t a = 0; a < alen; ++a) out->data[base + a * inner] /= denom;
        }
    return out;
}

template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& x) {
    auto out = make_op_output<T>(
        Shape{1}, {x}, [x](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += o.grad[0];
        });
    T acc = T(0);
    for (int64_t i = 0; i < x->numel(); ++i) acc += x->data[i];
    out->data[0] = acc;
    return out;
}

template <typename T>
TensorPtr<T> mean_all(const TensorPtr<T>& x) {
    if (x->numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    T inv = T(1) / static_cast<T>(x->numel());
    auto out = make_op_output<T>(
        Shape{1}, {x}, [x, inv](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += o.grad[0] * inv;
        });
    T acc = T(0);
    for (int64_t i = 0; i < x->numel(); ++i) acc += x->data[i];
    out->data[0] = acc * inv;
    return out;
}

template <typename T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    int nd = xs[0]->ndim();
    if (axis < 0 || axis >= nd)
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(xs[0]->shape));
    Shape out_shape = xs[0]->shape;
    for (size_t k = 1; k < xs.size(); ++k) {
        if (xs[k]->ndim() != nd)
            throw std::invalid_argument("concat: rank mismatch " + shape_str(xs[0]->shape) +
                                        " vs " + shape_str(xs[k]->shape));
        for (int d = 0; d < nd; ++d)
            if (d != axis && xs[k]->shape[d] != out_shape[d])
                throw std::invalid_argument("concat: dim " + std::to_string(d) + " mismatch " +
                                            shape_str(xs[0]->shape) + " vs " +
                                            shape_str(xs[k]->shape));
        out_shape[axis] += xs[k]->shape[axis];
    }
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < nd; ++i) inner *= out_shape[i];
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    int64_t out_axis = out_shape[axis];
    std::vector<int64_t> axis_sizes;
    for (const auto& x : xs) axis_sizes.push_back(x->shape[axis]);
    auto out = make_op_output<T>(
        out_shape, xs, [xs, axis_sizes, inner, outer, out_axis](const Tensor<T>& o) {
            int64_t off = 0;
            for (size_t k = 0; k < xs.size(); ++k) {
                const auto& x = xs[k];
                int64_t a = axis_sizes[k];
                if (x->requires_grad)
                    for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t j = 0; j < a * inner; ++j)
                            x->grad[ou * a * inner + j] +=
                                o.grad[(ou * out_axis + off) * inner + j];
                off += a;
            }
        });
    int64_t off = 0;
    for (const auto& x : xs) {
        int64_t a = x->shape[axis];
        for (int64_t ou = 0; ou < outer; ++ou)
            for (int64_t j = 0; j < a * inner; ++j)
                out->data[(ou * out_axis + off) * inner + j] = x->data[ou * a * inner + j];
        off += a;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

// Affine map over the last dimension; leading dims broadcast.
// x [..., Cin], w [Cout, Cin], b [Cout] or null -> [..., Cout]
template <typename T>
TensorPtr<T> linear(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
    if (w->ndim() != 2) throw std::invalid_argument("linear: weight must be 2-d, got " + shape_str(w->shape));
    int64_t co = w->shape[0], ci = w->shape[1];
    if (x->ndim() < 1 || x->shape.back() != ci)
        throw std::invalid_argument("linear: input " + shape_str(x->shape) +
                                    " last dim does not match weight " + shape_str(w->shape));
    if (b && b->numel() != co)
        throw std::invalid_argument("linear: bias " + shape_str(b->shape) + " does not match " +
                                    std::to_string(co) + " outputs");
    Shape out_shape = x->shape;
    out_shape.back() = co;
    int64_t rows = ci == 0 ? 0 : x->numel() / ci;
    std::vector<TensorPtr<T>> parents{x, w};
    if (b) parents.push_back(b);
    auto out = make_op_output<T>(
        out_shape, parents, [x, w, b, rows, co, ci](const Tensor<T>& o) {
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = o.grad.data() + r * co;
                if (x->requires_grad) {
                    T* gx = x->grad.data() + r * ci;
                    for (int64_t j = 0; j < co; ++j) {
                        T g = gr[j];
                        const T* wr = w->data.data() + j * ci;
                        for (int64_t i = 0; i < ci; ++i) gx[i] += g * wr[i];
                    }
                }
                if (w->requires_grad) {
                    const T* xr = x->data.data() + r * ci;
                    for (int64_t j = 0; j < co; ++j) {
                        T g = gr[j];
                        T* gw = w->grad.data() + j * ci;
                        for (int64_t i = 0; i < ci; ++i) gw[i] += g * xr[i];
                    }
                }
                if (b && b->requires_grad)
                    for (int64_t j = 0; j < co; ++j) b->grad[j] += gr[j];
            }
        });
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x->data.data() + r * ci;
        T* yr = out->data.data() + r * co;
        for (int64_t j = 0; j < co; ++j) {
            T acc = b ? b->data[j] : T(0);
            const T* wr = w->data.data() + j * ci;
            for (int64_t i = 0; i < ci; ++i) acc += wr[i] * xr[i];
            yr[j] = acc;
        }
    }
    return out;
}

// Affine map over the first (channel) dimension of channel-major data.
// x [Cin, N], w [Cout, Cin], b [Cout] or null -> [Cout, N]
template <typename T>
TensorPtr<T> channel_linear(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
    if (w->ndim() != 2)
        throw std::invalid_argument("channel_linear: weight must be 2-d, got " + shape_str(w->shape));
    if (x->ndim() < 1 || x->shape[0] != w->shape[1])
        throw std::invalid_argument("channel_linear: input " + shape_str(x->shape) +
                                    " channel dim does not match weight " + shape_str(w->shape));
    int64_t co = w->shape[0], ci = w->shape[1];
    if (b && b->numel() != co)
        throw std::invalid_argument("channel_linear: bias " + shape_str(b->shape) +
                                    " does not match " + std::to_string(co) + " outputs");
    Shape out_shape = x->shape;
    out_shape[0] = co;
    int64_t n = ci == 0 ? 0 : x->numel() / ci;
    std::vector<TensorPtr<T>> parents{x, w};
    if (b) parents.push_back(b);
    auto out = make_op_output<T>(
        out_shape, parents, [x, w, b, n, co, ci](const Tensor<T>& o) {
            for (int64_t j = 0; j < co; ++j) {
                const T* gr = o.grad.data() + j * n;
                const T* wr = w->data.data() + j * ci;
                if (x->requires_grad)
                    for (int64_t i = 0; i < ci; ++i) {
                        T wv = wr[i];
                        T* gx = x->grad.data() + i * n;
                        for (int64_t k = 0; k < n; ++k) gx[k] += wv * gr[k];
                    }
                if (w->requires_grad) {
                    T* gw = w->grad.data() + j * ci;
                    for (int64_t i = 0; i < ci; ++i) {
                        const T* xr = x->data.data() + i * n;
                        T acc = T(0);
                        for (int64_t k = 0; k < n; ++k) acc += gr[k] * xr[k];
                        gw[i] += acc;
                    }
                }
                if (b && b->requires_grad) {
                    T acc = T(0);
                    for (int64_t k = 0; k < n; ++k) acc += gr[k];
                    b->grad[j] += acc;
                }
            }
        });
    for (int64_t j = 0; j < co; ++j) {
        T* yr = out->data.data() + j * n;
        T bias = b ? b->data[j] : T(0);
        for (int64_t k = 0; k < n; ++k) yr[k] = bias;
        const T* wr = w->data.data() + j * ci;
        for (int64_t i = 0; i < ci; ++i) {
            T wv = wr[i];
            const T* xr = x->data.data() + i * n;
            for (int64_t k = 0; k < n; ++k) yr[k] += wv * xr[k];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Cross-correlation. x [B, Cin, H, W], w [Cout, Cin, kh, kw], b [Cout] or null.
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int64_t stride, int64_t padding) {
    if (x->ndim() != 4)
        throw std::invalid_argument("conv2d: input must be [B,C,H,W], got " + shape_str(x->shape));
    if (w->ndim() != 4)
        throw std::invalid_argument("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(w->shape));
    if (x->shape[1] != w->shape[1])
        throw std::invalid_argument("conv2d: input channels " + std::to_string(x->shape[1]) +
                                    " do not match weight channels " + std::to_string(w->shape[1]));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    int64_t B = x->shape[0], Ci = x->shape[1], H = x->shape[2], W = x->shape[3];
    int64_t Co = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw std::invalid_argument("conv2d: kernel " + shape_str(w->shape) +
                                    " exceeds padded input " + shape_str(x->shape));
    if (b && b->numel() != Co)
        throw std::invalid_argument("conv2d: bias " + shape_str(b->shape) + " does not match " +
                                    std::to_string(Co) + " outputs");
    std::vector<TensorPtr<T>> parents{x, w};
    if (b) parents.push_back(b);
    auto idx_x = [=](int64_t bb, int64_t c, int64_t h, int64_t ww2) {
        return ((bb * Ci + c) * H + h) * W + ww2;
    };
    auto idx_o = [=](int64_t bb, int64_t c, int64_t h, int64_t ww2) {
        return ((bb * Co + c) * Ho + h) * Wo + ww2;
    };
    auto idx_w = [=](int64_t co, int64_t ci, int64_t i, int64_t j) {
        return ((co * Ci + ci) * kh + i) * kw + j;
    };
    auto out = make_op_output<T>(
        Shape{B, Co, Ho, Wo}, parents,
        [x, w, b, B, Ci, Co, H, W, Ho, Wo, kh, kw, stride, padding, idx_x, idx_o,
         idx_w](const Tensor<T>& o) {
            for (int64_t bb = 0; bb < B; ++bb)
                for (int64_t co = 0; co < Co; ++co)
                    for (int64_t ho = 0; ho < Ho; ++ho) {
                        int64_t h0 = ho * stride - padding;
                        int64_t ilo, ihi;
                        detail::tap_range(h0, H, kh, 1, ilo, ihi);
                        for (int64_t wo = 0; wo < Wo; ++wo) {
                            int64_t w0 = wo * stride - padding;
                            int64_t jlo, jhi;
                            detail::tap_range(w0, W, kw, 1, jlo, jhi);
                            T g = o.grad[idx_o(bb, co, ho, wo)];
                            if (g == T(0)) continue;
                            if (b && b->requires_grad) b->grad[co] += g;
                            for (int64_t ci = 0; ci < Ci; ++ci)
                                for (int64_t i = ilo; i <= ihi; ++i)
                                    for (int64_t j = jlo; j <= jhi; ++j) {
                                        int64_t xi = idx_x(bb, ci, h0 + i, w0 + j);
                                        int64_t wi = idx_w(co, ci, i, j);
                                        if (x->requires_grad) x->grad[xi] += g * w->data[wi];
                                        if (w->requires_grad) w->grad[wi] += g * x->data[xi];
                                    }
                        }
                    }
        });
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t ho = 0; ho < Ho; ++ho) {
                int64_t h0 = ho * stride - padding;
                int64_t ilo, ihi;
                detail::tap_range(h0, H, kh, 1, ilo, ihi);
                for (int64_t wo = 0; wo < Wo; ++wo) {
                    int64_t w0 = wo * stride - padding;
                    int64_t jlo, jhi;
                    detail::tap_range(w0, W, kw, 1, jlo, jhi);
                    T acc = b ? b->data[co] : T(0);
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t i = ilo; i <= ihi; ++i)
                            for (int64_t j = jlo; j <= jhi; ++j)
                                acc += w->data[idx_w(co, ci, i, j)] *
                                       x->data[idx_x(bb, ci, h0 + i, w0 + j)];
                    out->data[idx_o(bb, co, ho, wo)] = acc;
                }
            }
    return out;
}

// Per-channel 1-d convolution along one spatial axis of a voxel grid.
// x [B, C, X, Y, Z], w [C, k] with k odd; padding (k-1)/2 keeps dims.
template <typename T>
TensorPtr<T> conv1d_axis(const TensorPtr<T>& x, const TensorPtr<T>& w, Axis axis) {
    if (x->ndim() != 5)
        throw std::invalid_argument("conv1d_axis: input must be [B,C,X,Y,Z], got " + shape_str(x->shape));
    if (w->ndim() != 2)
        throw std::invalid_argument("conv1d_axis: weight must be [C,k], got " + shape_str(w->shape));
    if (w->shape[0] != x->shape[1])
        throw std::invalid_argument("conv1d_axis: weight channels " + std::to_string(w->shape[0]) +
                                    " do not match input channels " + std::to_string(x->shape[1]));
    int64_t k = w->shape[1];
    if (k % 2 == 0)
        throw std::invalid_argument("conv1d_axis: kernel size must be odd, got " + std::to_string(k));
    int64_t B = x->shape[0], C = x->shape[1];
    int64_t dims[3] = {x->shape[2], x->shape[3], x->shape[4]};
    int ax = static_cast<int>(axis);
    int64_t pad = (k - 1) / 2;
    // Stride of a unit step along the chosen axis in the flat layout.
    int64_t step = 1;
    for (int d = ax + 1; d < 3; ++d) step *= dims[d];
    int64_t alen = dims[ax];
    int64_t inner = step;
    int64_t outer_per_ch = (dims[0] * dims[1] * dims[2]) / (alen * inner);
    auto out = make_op_output<T>(
        x->shape, {x, w},
        [x, w, B, C, alen, inner, outer_per_ch, pad, k](const Tensor<T>& o) {
            int64_t spatial = alen * inner * outer_per_ch;
            for (int64_t bb = 0; bb < B; ++bb)
                for (int64_t c = 0; c < C; ++c) {
                    int64_t base_ch = (bb * C + c) * spatial;
                    const T* wr = w->data.data() + c * k;
                    for (int64_t ou = 0; ou < outer_per_ch; ++ou)
                        for (int64_t a = 0; a < alen; ++a) {
                            int64_t klo, khi;
                            detail::tap_range(a - pad, alen, k, 1, klo, khi);
                            for (int64_t in = 0; in < inner; ++in) {
                                int64_t oi = base_ch + (ou * alen + a) * inner + in;
                                T g = o.grad[oi];
                                if (g == T(0)) continue;
                                for (int64_t kk = klo; kk <= khi; ++kk) {
                                    int64_t xi = base_ch + (ou * alen + a - pad + kk) * inner + in;
                                    if (x->requires_grad) x->grad[xi] += g * wr[kk];
                                    if (w->requires_grad) w->grad[c * k + kk] += g * x->data[xi];
                                }
                            }
                        }
                }
        });
    int64_t spatial = alen * inner * outer_per_ch;
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
            int64_t base_ch = (bb * C + c) * spatial;
            const T* wr = w->data.data() + c * k;
            for (int64_t ou = 0; ou < outer_per_ch; ++ou)
                for (int64_t a = 0; a < alen; ++a) {
                    int64_t klo, khi;
                    detail::tap_range(a - pad, alen, k, 1, klo, khi);
                    for (int64_t in = 0; in < inner; ++in) {
                        T acc = T(0);
                        for (int64_t kk = klo; kk <= khi; ++kk)
                            acc += wr[kk] * x->data[base_ch + (ou * alen + a - pad + kk) * inner + in];
                        out->data[base_ch + (ou * alen + a) * inner + in] = acc;
                    }
                }
        }
    return out;
}

// Dense 3-d convolution on a single grid. x [Cin, X, Y, Z],
// w [Cout, Cin, kx, ky, kz], b [Cout] or null.
template <typename T>
TensorPtr<T> conv3d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int64_t stride, int64_t padding, int64_t dilation = 1) {
    if (x->ndim() != 4)
        throw std::invalid_argument("conv3d: input must be [C,X,Y,Z], got " + shape_str(x->shape));
    if (w->ndim() != 5)
        throw std::invalid_argument("conv3d: weight must be [Cout,Cin,kx,ky,kz], got " + shape_str(w->shape));
    if (x->shape[0] != w->shape[1])
        throw std::invalid_argument("conv3d: input channels " + std::to_string(x->shape[0]) +
                                    " do not match weight channels " + std::to_string(w->shape[1]));
    if (stride < 1 || dilation < 1)
        throw std::invalid_argument("conv3d: stride and dilation must be positive");
    int64_t Ci = x->shape[0], X = x->shape[1], Y = x->shape[2], Z = x->shape[3];
    int64_t Co = w->shape[0], kx = w->shape[2], ky = w->shape[3], kz = w->shape[4];
    auto out_dim = [&](int64_t in, int64_t k) {
        int64_t eff = dilation * (k - 1) + 1;
        if (in + 2 * padding < eff)
            throw std::invalid_argument("conv3d: kernel " + shape_str(w->shape) +
                                        " exceeds padded input " + shape_str(x->shape));
        return (in + 2 * padding - eff) / stride + 1;
    };
    int64_t Xo = out_dim(X, kx), Yo = out_dim(Y, ky), Zo = out_dim(Z, kz);
    if (b && b->numel() != Co)
        throw std::invalid_argument("conv3d: bias " + shape_str(b->shape) + " does not match " +
                                    std::to_string(Co) + " outputs");
    std::vector<TensorPtr<T>> parents{x, w};
    if (b) parents.push_back(b);
    auto run = [=](const T* xd, const T* wd, const T* bd, T* od, T* gx, T* gw, T* gb,
                   const T* go) {
        // Forward when od != null; backward accumulation otherwise.
        for (int64_t xo = 0; xo < Xo; ++xo) {
            int64_t x0 = xo * stride - padding, xlo, xhi;
            detail::tap_range(x0, X, kx, dilation, xlo, xhi);
            for (int64_t yo = 0; yo < Yo; ++yo) {
                int64_t y0 = yo * stride - padding, ylo, yhi;
                detail::tap_range(y0, Y, ky, dilation, ylo, yhi);
                for (int64_t zo = 0; zo < Zo; ++zo) {
                    int64_t z0 = zo * stride - padding, zlo, zhi;
                    detail::tap_range(z0, Z, kz, dilation, zlo, zhi);
                    for (int64_t co = 0; co < Co; ++co) {
                        int64_t oi = ((co * Xo + xo) * Yo + yo) * Zo + zo;
                        if (od) {
                            T acc = bd ? bd[co] : T(0);
                            for (int64_t ci = 0; ci < Ci; ++ci)
                                for (int64_t i = xlo; i <= xhi; ++i)
                                    for (int64_t j = ylo; j <= yhi; ++j)
                                        for (int64_t l = zlo; l <= zhi; ++l)
                                            acc += wd[(((co * Ci + ci) * kx + i) * ky + j) * kz + l] *
                                                   xd[((ci * X + x0 + i * dilation) * Y + y0 +
                                                       j * dilation) *
                                                          Z +
                                                      z0 + l * dilation];
                            od[oi] = acc;
                        } else {
                            T g = go[oi];
                            if (g == T(0)) continue;
                            if (gb) gb[co] += g;
                            for (int64_t ci = 0; ci < Ci; ++ci)
                                for (int64_t i = xlo; i <= xhi; ++i)
                                    for (int64_t j = ylo; j <= yhi; ++j)
                                        for (int64_t l = zlo; l <= zhi; ++l) {
                                            int64_t wi = (((co * Ci + ci) * kx + i) * ky + j) * kz + l;
                                            int64_t xi = ((ci * X + x0 + i * dilation) * Y + y0 +
                                                          j * dilation) *
                                                             Z +
                                                         z0 + l * dilation;
                                            if (gx) gx[xi] += g * wd[wi];
                                            if (gw) gw[wi] += g * xd[xi];
                                        }
                        }
                    }
                }
            }
        }
    };
    auto out = make_op_output<T>(
        Shape{Co, Xo, Yo, Zo}, parents, [x, w, b, run](const Tensor<T>& o) {
            run(x->data.data(), w->data.data(), b ? b->data.data() : nullptr, nullptr,
                x->requires_grad ? x->grad.data() : nullptr,
                w->requires_grad ? w->grad.data() : nullptr,
                (b && b->requires_grad) ? b->grad.data() : nullptr, o.grad.data());
        });
    run(x->data.data(), w->data.data(), b ? b->data.data() : nullptr, out->data.data(), nullptr,
        nullptr, nullptr, nullptr);
    return out;
}

// Nearest-neighbor upsampling of a voxel grid by an integer factor.
// x [C, X, Y, Z] -> [C, fX, fY, fZ]
template <typename T>
TensorPtr<T> upsample3d_nearest(const TensorPtr<T>& x, int64_t factor) {
    if (x->ndim() != 4)
        throw std::invalid_argument("upsample3d_nearest: input must be [C,X,Y,Z], got " +
                                    shape_str(x->shape));
    if (factor < 1) throw std::invalid_argument("upsample3d_nearest: factor must be positive");
    int64_t C = x->shape[0], X = x->shape[1], Y = x->shape[2], Z = x->shape[3];
    int64_t Xo = X * factor, Yo = Y * factor, Zo = Z * factor;
    auto out = make_op_output<T>(
        Shape{C, Xo, Yo, Zo}, {x}, [x, C, X, Y, Z, Xo, Yo, Zo, factor](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t xo = 0; xo < Xo; ++xo)
                    for (int64_t yo = 0; yo < Yo; ++yo)
                        for (int64_t zo = 0; zo < Zo; ++zo)
                            x->grad[((c * X + xo / factor) * Y + yo / factor) * Z + zo / factor] +=
                                o.grad[((c * Xo + xo) * Yo + yo) * Zo + zo];
        });
    for (int64_t c = 0; c < C; ++c)
        for (int64_t xo = 0; xo < Xo; ++xo)
            for (int64_t yo = 0; yo < Yo; ++yo)
                for (int64_t zo = 0; zo < Zo; ++zo)
                    out->data[((c * Xo + xo) * Yo + yo) * Zo + zo] =
                        x->data[((c * X + xo / factor) * Y + yo / factor) * Z + zo / factor];
    return out;
}

// ---------------------------------------------------------------------------
// Gather / scatter between dense grids and channel-major columns
// ---------------------------------------------------------------------------

namespace detail {

inline void check_coords(const char* op, const std::vector<Coord>& coords, int64_t X, int64_t Y,
                         int64_t Z) {
    for (size_t i = 0; i < coords.size(); ++i) {
        const Coord& c = coords[i];
        if (c[0] < 0 || c[0] >= X || c[1] < 0 || c[1] >= Y || c[2] < 0 || c[2] >= Z)
            throw std::invalid_argument(std::string(op) + ": coordinate " + std::to_string(i) +
                                        " = (" + std::to_string(c[0]) + "," + std::to_string(c[1]) +
                                        "," + std::to_string(c[2]) + ") outside grid [" +
                                        std::to_string(X) + "," + std::to_string(Y) + "," +
                                        std::to_string(Z) + "]");
    }
}

}  // namespace detail

// Column i of the output is the channel vector of grid cell coords[i].
// grid [C, X, Y, Z] -> [C, N]
template <typename T>
TensorPtr<T> gather_voxels(const TensorPtr<T>& grid, const std::vector<Coord>& coords) {
    if (grid->ndim() != 4)
        throw std::invalid_argument("gather_voxels: grid must be [C,X,Y,Z], got " +
                                    shape_str(grid->shape));
    int64_t C = grid->shape[0], X = grid->shape[1], Y = grid->shape[2], Z = grid->shape[3];
    detail::check_coords("gather_voxels", coords, X, Y, Z);
    int64_t N = static_cast<int64_t>(coords.size());
    auto out = make_op_output<T>(
        Shape{C, N}, {grid}, [grid, coords, C, X, Y, Z, N](const Tensor<T>& o) {
            if (!grid->requires_grad) return;
            for (int64_t n = 0; n < N; ++n) {
                int64_t cell = (coords[n][0] * Y + coords[n][1]) * Z + coords[n][2];
                for (int64_t c = 0; c < C; ++c)
                    grid->grad[c * X * Y * Z + cell] += o.grad[c * N + n];
            }
        });
    for (int64_t n = 0; n < N; ++n) {
        int64_t cell = (coords[n][0] * Y + coords[n][1]) * Z + coords[n][2];
        for (int64_t c = 0; c < C; ++c) out->data[c * N + n] = grid->data[c * X * Y * Z + cell];
    }
    return out;
}

// Adjoint of gather_voxels: writes columns into a zero grid, summing duplicates.
// cols [C, N] -> [C, X, Y, Z]
template <typename T>
TensorPtr<T> scatter_voxels(const TensorPtr<T>& cols, const std::vector<Coord>& coords, int64_t X,
                            int64_t Y, int64_t Z) {
    if (cols->ndim() != 2)
        throw std::invalid_argument("scatter_voxels: columns must be [C,N], got " +
                                    shape_str(cols->shape));
    int64_t C = cols->shape[0], N = cols->shape[1];
    if (static_cast<int64_t>(coords.size()) != N)
        throw std::invalid_argument("scatter_voxels: " + std::to_string(coords.size()) +
                                    " coordinates for " + std::to_string(N) + " columns");
    detail::check_coords("scatter_voxels", coords, X, Y, Z);
    auto out = make_op_output<T>(
        Shape{C, X, Y, Z}, {cols}, [cols, coords, C, X, Y, Z, N](const Tensor<T>& o) {
            if (!cols->requires_grad) return;
            for (int64_t n = 0; n < N; ++n) {
                int64_t cell = (coords[n][0] * Y + coords[n][1]) * Z + coords[n][2];
                for (int64_t c = 0; c < C; ++c)
                    cols->grad[c * N + n] += o.grad[c * X * Y * Z + cell];
            }
        });
    for (int64_t n = 0; n < N; ++n) {
        int64_t cell = (coords[n][0] * Y + coords[n][1]) * Z + coords[n][2];
        for (int64_t c = 0; c < C; ++c) out->data[c * X * Y * Z + cell] += cols->data[c * N + n];
    }
    return out;
}

// Column subset of channel-major data. x [C, N] -> [C, M]; duplicate indices
// are legal and their gradients sum.
template <typename T>
TensorPtr<T> select_columns(const TensorPtr<T>& x, const std::vector<int64_t>& indices) {
    if (x->ndim() != 2)
        throw std::invalid_argument("select_columns: input must be [C,N], got " + shape_str(x->shape));
    int64_t C = x->shape[0], N = x->shape[1];
    for (size_t i = 0; i < indices.size(); ++i)
        if (indices[i] < 0 || indices[i] >= N)
            throw std::invalid_argument("select_columns: index " + std::to_string(i) + " = " +
                                        std::to_string(indices[i]) + " outside [0," +
                                        std::to_string(N) + ")");
    int64_t M = static_cast<int64_t>(indices.size());
    auto out = make_op_output<T>(
        Shape{C, M}, {x}, [x, indices, C, N, M](const Tensor<T>& o) {
            if (!x->requires_grad) return;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t m = 0; m < M; ++m)
                    x->grad[c * N + indices[m]] += o.grad[c * M + m];
        });
    for (int64_t c = 0; c < C; ++c)
        for (int64_t m = 0; m < M; ++m) out->data[c * M + m] = x->data[c * N + indices[m]];
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-channel normalization over everything after the channel dim.
// x [C, ...], gamma [C], beta [C]. Channels with a single element normalize
// to zero (variance floor eps keeps this finite).
template <typename T>
TensorPtr<T> channel_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                          const TensorPtr<T>& beta, T eps = T(1e-5)) {
    if (x->ndim() < 1)
        throw std::invalid_argument("channel_norm: input must have a channel dim");
    int64_t C = x->shape[0];
    if (gamma->numel() != C || beta->numel() != C)
        throw std::invalid_argument("channel_norm: gamma/beta must have " + std::to_string(C) +
                                    " entries, got " + shape_str(gamma->shape) + " and " +
                                    shape_str(beta->shape));
    int64_t S = C == 0 ? 0 : x->numel() / C;
    auto out = make_op_output<T>(
        x->shape, {x, gamma, beta}, [x, gamma, beta, C, S, eps](const Tensor<T>& o) {
            if (S == 0) return;
            for (int64_t c = 0; c < C; ++c) {
                const T* xs = x->data.data() + c * S;
                const T* gs = o.grad.data() + c * S;
                T mean = T(0), var = T(0);
                for (int64_t i = 0; i < S; ++i) mean += xs[i];
                mean /= static_cast<T>(S);
                for (int64_t i = 0; i < S; ++i) var += (xs[i] - mean) * (xs[i] - mean);
                var /= static_cast<T>(S);
                T inv_std = T(1) / std::sqrt(var + eps);
                T gsum = T(0), gxsum = T(0);
                for (int64_t i = 0; i < S; ++i) {
                    T xhat = (xs[i] - mean) * inv_std;
                    gsum += gs[i];
                    gxsum += gs[i] * xhat;
                }
                if (gamma->requires_grad) gamma->grad[c] += gxsum;
                if (beta->requires_grad) beta->grad[c] += gsum;
                if (x->requires_grad) {
                    T* gx = x->grad.data() + c * S;
                    T g = gamma->data[c];
                    for (int64_t i = 0; i < S; ++i) {
                        T xhat = (xs[i] - mean) * inv_std;
                        gx[i] += g * inv_std *
                                 (gs[i] - gsum / static_cast<T>(S) - xhat * gxsum / static_cast<T>(S));
                    }
                }
            }
        });
    for (int64_t c = 0; c < C; ++c) {
        const T* xs = x->data.data() + c * S;
        T* ys = out->data.data() + c * S;
        T mean = T(0), var = T(0);
        for (int64_t i = 0; i < S; ++i) mean += xs[i];
        if (S > 0) mean /= static_cast<T>(S);
        for (int64_t i = 0; i < S; ++i) var += (xs[i] - mean) * (xs[i] - mean);
        if (S > 0) var /= static_cast<T>(S);
        T inv_std = T(1) / std::sqrt(var + eps);
        for (int64_t i = 0; i < S; ++i)
            ys[i] = gamma->data[c] * (xs[i] - mean) * inv_std + beta->data[c];
    }
    return out;
}

// Per-(batch, channel) normalization over the spatial dims of image stacks.
// x [B, C, H, W], gamma [C], beta [C].
template <typename T>
TensorPtr<T> instance_norm2d(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                             const TensorPtr<T>& beta, T eps = T(1e-5)) {
    if (x->ndim() != 4)
        throw std::invalid_argument("instance_norm2d: input must be [B,C,H,W], got " +
                                    shape_str(x->shape));
    int64_t B = x->shape[0], C = x->shape[1], S = x->shape[2] * x->shape[3];
    if (gamma->numel() != C || beta->numel() != C)
        throw std::invalid_argument("instance_norm2d: gamma/beta must have " + std::to_string(C) +
                                    " entries, got " + shape_str(gamma->shape) + " and " +
                                    shape_str(beta->shape));
    auto out = make_op_output<T>(
        x->shape, {x, gamma, beta}, [x, gamma, beta, B, C, S, eps](const Tensor<T>& o) {
            if (S == 0) return;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const T* xs = x->data.data() + (b * C + c) * S;
                    const T* gs = o.grad.data() + (b * C + c) * S;
                    T mean = T(0), var = T(0);
                    for (int64_t i = 0; i < S; ++i) mean += xs[i];
                    mean /= static_cast<T>(S);
                    for (int64_t i = 0; i < S; ++i) var += (xs[i] - mean) * (xs[i] - mean);
                    var /= static_cast<T>(S);
                    T inv_std = T(1) / std::sqrt(var + eps);
                    T gsum = T(0), gxsum = T(0);
                    for (int64_t i = 0; i < S; ++i) {
                        T xhat = (xs[i] - mean) * inv_std;
                        gsum += gs[i];
                        gxsum += gs[i] * xhat;
                    }
                    if (gamma->requires_grad) gamma->grad[c] += gxsum;
                    if (beta->requires_grad) beta->grad[c] += gsum;
                    if (x->requires_grad) {
                        T* gx = x->grad.data() + (b * C + c) * S;
                        T g = gamma->data[c];
                        for (int64_t i = 0; i < S; ++i) {
                            T xhat = (xs[i] - mean) * inv_std;
                            gx[i] += g * inv_std *
                                     (gs[i] - gsum / static_cast<T>(S) -
                                      xhat * gxsum / static_cast<T>(S));
                        }
                    }
                }
        });
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T* xs = x->data.data() + (b * C + c) * S;
            T* ys = out->data.data() + (b * C + c) * S;
            T mean = T(0), var = T(0);
            for (int64_t i = 0; i < S; ++i) mean += xs[i];
            if (S > 0) mean /= static_cast<T>(S);
            for (int64_t i = 0; i < S; ++i) var += (xs[i] - mean) * (xs[i] - mean);
            if (S > 0) var /= static_cast<T>(S);
            T inv_std = T(1) / std::sqrt(var + eps);
            for (int64_t i = 0; i < S; ++i)
                ys[i] = gamma->data[c] * (xs[i] - mean) * inv_std + beta->data[c];
        }
    return out;
}

}  // namespace ssc
