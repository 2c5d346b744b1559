#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

// Central finite differences against reverse-mode gradients. f must rebuild
// its graph from the given leaves on every call and return a scalar. Run at
// 64-bit; the comparison is meaningless at float precision.
template <typename T>
double gradcheck_max_rel_err(
    const std::function<TensorPtr<T>(const std::vector<TensorPtr<T>>&)>& f,
    const std::vector<TensorPtr<T>>& inputs, T h = T(1e-5)) {
    for (auto& x : inputs) {
        x->requires_grad = true;
        x->ensure_grad();
        x->zero_grad();
    }
    auto loss = f(inputs);
    if (loss->numel() != 1)
        throw std::invalid_argument("gradcheck: loss must be scalar, got shape " +
                                    shape_str(loss->shape));
    backward(loss);
    std::vector<std::vector<T>> analytic;
    for (auto& x : inputs) analytic.push_back(x->grad);

    double max_rel = 0.0;
    for (size_t xi = 0; xi < inputs.size(); ++xi) {
        auto& x = inputs[xi];
        for (size_t j = 0; j < x->data.size(); ++j) {
            T saved = x->data[j];
            x->data[j] = saved + h;
            T lp = f(inputs)->data[0];
            x->data[j] = saved - h;
            T lm = f(inputs)->data[0];
            x->data[j] = saved;
            double numeric = (static_cast<double>(lp) - static_cast<double>(lm)) /
                             (2.0 * static_cast<double>(h));
            double a = static_cast<double>(analytic[xi][j]);
            double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

struct GradCheckCase {
    std::string name;
    std::function<double()> run;  // returns max relative error
};

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

inline std::vector<GradCheckReport> run_gradcheck_cases(const std::vector<GradCheckCase>& cases,
                                                        double tol) {
    std::vector<GradCheckReport> out;
    for (const auto& c : cases) {
        GradCheckReport r;
        r.name = c.name;
        r.max_rel_err = c.run();
        r.pass = r.max_rel_err <= tol;
        out.push_back(r);
    }
    return out;
}

}  // namespace ssc
