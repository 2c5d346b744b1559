#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "ssc/rng.hpp"

namespace ssc {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

namespace detail {
// Creation-order ids; backward visits nodes in descending id, which is the
// reverse of execution order (valid topological order by construction).
inline int64_t& node_counter() {
    static thread_local int64_t counter = 0;
    return counter;
}
}  // namespace detail

// Dense n-dimensional value on the reverse-mode tape. data is contiguous,
// row-major; grad is allocated iff requires_grad and matches data's shape.
template <typename T>
struct Tensor : std::enable_shared_from_this<Tensor<T>> {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    int64_t node_id = 0;
    std::vector<TensorPtr<T>> parents;
    // Reads the output's accumulated grad and adds into parents' grads.
    std::function<void(const Tensor<T>&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    Shape strides() const {
        Shape st(shape.size(), 1);
        for (int i = ndim() - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
        return st;
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

    bool is_leaf() const { return parents.empty(); }
};

template <typename T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    for (int64_t d : t->shape)
        if (d < 0) throw std::invalid_argument("make_tensor: negative dimension in " + shape_str(t->shape));
    int64_t n = shape_numel(t->shape);
    t->data.assign(static_cast<size_t>(n), T(0));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    t->node_id = ++detail::node_counter();
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    if (static_cast<int64_t>(data.size()) != t->numel())
        throw std::invalid_argument("make_tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(t->shape));
    t->data = std::move(data);
    return t;
}

template <typename T>
TensorPtr<T> full_like_value(const Shape& shape, T value, bool requires_grad = false) {
    auto t = make_tensor<T>(shape, requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

template <typename T>
TensorPtr<T> rand_uniform(const Shape& shape, SplitMix64& rng, T lo, T hi, bool requires_grad = false) {
    auto t = make_tensor<T>(shape, requires_grad);
    for (auto& v : t->data) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
}

template <typename T>
TensorPtr<T> rand_normal(const Shape& shape, SplitMix64& rng, T mean, T stddev, bool requires_grad = false) {
    auto t = make_tensor<T>(shape, requires_grad);
    for (auto& v : t->data) v = static_cast<T>(mean + stddev * static_cast<T>(rng.normal()));
    return t;
}

// Creates the output of an op. The output participates in differentiation iff
// any parent does; parents and the closure are only recorded in that case, so
// inference graphs carry no tape.
template <typename T>
TensorPtr<T> make_op_output(Shape shape, std::vector<TensorPtr<T>> parent_list,
                            std::function<void(const Tensor<T>&)> backward_fn) {
    bool needs = false;
    for (const auto& p : parent_list)
        if (p && p->requires_grad) needs = true;
    auto out = make_tensor<T>(std::move(shape), needs);
    if (needs) {
        out->parents = std::move(parent_list);
        out->backward_fn = std::move(backward_fn);
    }
    return out;
}

// Ordered record of the operations reachable from a root, ascending node_id
// (execution order). backward traverses it exactly once in reverse.
template <typename T>
struct Graph {
    std::vector<Tensor<T>*> nodes;
};

template <typename T>
Graph<T> build_graph(const TensorPtr<T>& root) {
    Graph<T> g;
    if (!root) return g;
    std::vector<Tensor<T>*> stack{root.get()};
    std::unordered_set<const Tensor<T>*> seen;
    while (!stack.empty()) {
        Tensor<T>* t = stack.back();
        stack.pop_back();
        if (!seen.insert(t).second) continue;
        g.nodes.push_back(t);
        for (const auto& p : t->parents)
            if (p && p->requires_grad) stack.push_back(p.get());
    }
    std::sort(g.nodes.begin(), g.nodes.end(),
              [](const Tensor<T>* a, const Tensor<T>* b) { return a->node_id < b->node_id; });
    return g;
}

// Reverse-mode sweep from a scalar loss. Repeated calls accumulate into
// existing grads; call zero_grad on parameters between steps.
template <typename T>
void backward(const TensorPtr<T>& loss) {
    if (!loss) throw std::invalid_argument("backward: null loss");
    if (loss->numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    if (!loss->requires_grad) return;
    Graph<T> g = build_graph(loss);
    // Intermediate grads start from zero for this sweep; leaves keep
    // whatever has been accumulated so far.
    for (Tensor<T>* t : g.nodes) {
        t->ensure_grad();
        if (!t->is_leaf()) t->zero_grad();
    }
    loss->grad[0] += T(1);
    for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
        Tensor<T>* t = *it;
        if (t->backward_fn) t->backward_fn(*t);
    }
}

}  // namespace ssc
