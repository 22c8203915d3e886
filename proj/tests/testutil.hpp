#pragma once

// Shared test helpers. The contraction and gradient oracles here are kept
// independent of the library's execution paths on purpose: they recompute
// everything with plain nested loops in double precision.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "einsum.hpp"
#include "tensor.hpp"

namespace testutil {

using tlra::Shape;
using tlra::Tensor;

// Brute-force einsum: iterate every joint index assignment, look up each
// operand element by label, accumulate the product in double.
inline Tensor oracle_einsum(const std::string& subscripts, const std::vector<Tensor>& ops) {
    auto arrow = subscripts.find("->");
    std::string lhs = subscripts.substr(0, arrow);
    std::string out = subscripts.substr(arrow + 2);
    std::vector<std::string> terms;
    std::string cur;
    for (char c : lhs) {
        if (c == ',') {
            terms.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    terms.push_back(cur);

    std::map<char, int64_t> sizes;
    for (size_t t = 0; t < terms.size(); ++t)
        for (size_t k = 0; k < terms[t].size(); ++k) sizes[terms[t][k]] = ops[t].shape()[k];

    std::string all = out;
    for (const auto& t : terms)
        for (char c : t)
            if (all.find(c) == std::string::npos) all.push_back(c);

    Shape out_shape;
    for (char c : out) out_shape.push_back(sizes[c]);
    Tensor result(out_shape.empty() ? Shape{} : out_shape);
    std::vector<double> acc(static_cast<size_t>(result.size()), 0.0);

    std::vector<int64_t> dims;
    for (char c : all) dims.push_back(sizes[c]);
    int64_t total = 1;
    for (int64_t d : dims) total *= d;

    std::vector<int64_t> idx(all.size(), 0);
    for (int64_t flat = 0; flat < total; ++flat) {
        double prod = 1.0;
        for (size_t t = 0; t < terms.size(); ++t) {
            std::vector<int64_t> oi;
            for (char c : terms[t]) oi.push_back(idx[all.find(c)]);
            prod *= ops[t].at(oi);
        }
        int64_t off = 0;
        for (char c : out) off = off * sizes[c] + idx[all.find(c)];
        acc[static_cast<size_t>(off)] += prod;
        for (int i = static_cast<int>(all.size()) - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < dims[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    for (int64_t i = 0; i < result.size(); ++i) result[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
    return result;
}

// Relative error in the infinity norm, guarded for tiny references.
inline double rel_err(const Tensor& got, const Tensor& want, double floor = 1e-6) {
    double num = tlra::max_abs_diff(got, want);
    double den = std::max(static_cast<double>(want.max_abs()), floor);
    return num / den;
}

// Central finite differences of a scalar-valued function around x, one
// perturbed evaluation pair per element. `f` is expected to evaluate in
// double internally when used as the 64-bit shadow.
inline Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        float orig = xp[i];
        xp[i] = static_cast<float>(orig + h);
        double fp = f(xp);
        xp[i] = static_cast<float>(orig - h);
        double fm = f(xp);
        xp[i] = orig;
        g[i] = static_cast<float>((fp - fm) / (2.0 * h));
    }
    return g;
}

inline Tensor arange_tensor(Shape shape) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i + 1);
    return t;
}

// ---- 64-bit shadow ops -------------------------------------------------
// Double-precision re-implementations of the nonlinear forward functions,
// used to compute finite-difference reference gradients without f32 noise.

struct DT {
    Shape shape;
    std::vector<double> v;
    static DT from(const Tensor& t) {
        DT d;
        d.shape = t.shape();
        d.v.assign(t.data(), t.data() + t.size());
        return d;
    }
};

inline DT sh_einsum(const std::string& subscripts, const std::vector<DT>& ops) {
    auto arrow = subscripts.find("->");
    std::string lhs = subscripts.substr(0, arrow);
    std::string out = subscripts.substr(arrow + 2);
    std::vector<std::string> terms;
    std::string cur;
    for (char c : lhs) {
        if (c == ',') {
            terms.push_back(cur);
            cur.clear();
        } else
            cur.push_back(c);
    }
    terms.push_back(cur);
    std::map<char, int64_t> sizes;
    for (size_t t = 0; t < terms.size(); ++t)
        for (size_t k = 0; k < terms[t].size(); ++k) sizes[terms[t][k]] = ops[t].shape[k];
    std::string all = out;
    for (const auto& t : terms)
        for (char c : t)
            if (all.find(c) == std::string::npos) all.push_back(c);
    DT result;
    for (char c : out) result.shape.push_back(sizes[c]);
    int64_t out_n = 1;
    for (auto d : result.shape) out_n *= d;
    result.v.assign(static_cast<size_t>(out_n), 0.0);
    std::vector<int64_t> dims;
    for (char c : all) dims.push_back(sizes[c]);
    int64_t total = 1;
    for (auto d : dims) total *= d;
    std::vector<int64_t> idx(all.size(), 0);
    for (int64_t flat = 0; flat < total; ++flat) {
        double prod = 1.0;
        for (size_t t = 0; t < terms.size(); ++t) {
            int64_t off = 0;
            for (size_t k = 0; k < terms[t].size(); ++k) off = off * sizes[terms[t][k]] + idx[all.find(terms[t][k])];
            prod *= ops[t].v[static_cast<size_t>(off)];
        }
        int64_t off = 0;
        for (char c : out) off = off * sizes[c] + idx[all.find(c)];
        result.v[static_cast<size_t>(off)] += prod;
        for (int i = static_cast<int>(all.size()) - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < dims[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return result;
}

inline std::vector<double> sh_gelu(const std::vector<double>& x) {
    std::vector<double> y(x.size());
    const double c = std::sqrt(2.0 / 3.14159265358979323846);
    for (size_t i = 0; i < x.size(); ++i)
        y[i] = 0.5 * x[i] * (1.0 + std::tanh(c * (x[i] + 0.044715 * x[i] * x[i] * x[i])));
    return y;
}

// normalize along `axis` of `shape`: v / max(||v||_2, eps)
inline std::vector<double> sh_l2norm(const std::vector<double>& x, const Shape& shape, int axis, double eps) {
    int64_t outer = 1, n = shape[static_cast<size_t>(axis)], inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
    std::vector<double> y(x.size());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double nrm = 0.0;
            for (int64_t k = 0; k < n; ++k) {
                double v = x[static_cast<size_t>((o * n + k) * inner + i)];
                nrm += v * v;
            }
            double d = std::max(std::sqrt(nrm), eps);
            for (int64_t k = 0; k < n; ++k)
                y[static_cast<size_t>((o * n + k) * inner + i)] = x[static_cast<size_t>((o * n + k) * inner + i)] / d;
        }
    return y;
}

inline std::vector<double> sh_softmax(const std::vector<double>& x, const Shape& shape, int axis) {
    int64_t outer = 1, n = shape[static_cast<size_t>(axis)], inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
    std::vector<double> y(x.size());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double mx = -1e300;
            for (int64_t k = 0; k < n; ++k) mx = std::max(mx, x[static_cast<size_t>((o * n + k) * inner + i)]);
            double z = 0.0;
            for (int64_t k = 0; k < n; ++k) z += std::exp(x[static_cast<size_t>((o * n + k) * inner + i)] - mx);
            for (int64_t k = 0; k < n; ++k)
                y[static_cast<size_t>((o * n + k) * inner + i)] =
                    std::exp(x[static_cast<size_t>((o * n + k) * inner + i)] - mx) / z;
        }
    return y;
}

inline double sh_cross_entropy(const std::vector<double>& logits, int64_t vocab, const std::vector<int64_t>& targets,
                               const std::vector<float>& weights) {
    int64_t rows = static_cast<int64_t>(logits.size()) / vocab;
    double wsum = 0.0, loss = 0.0;
    for (float w : weights) wsum += w;
    for (int64_t r = 0; r < rows; ++r) {
        if (weights[static_cast<size_t>(r)] == 0.0f) continue;
        double mx = -1e300;
        for (int64_t v = 0; v < vocab; ++v) mx = std::max(mx, logits[static_cast<size_t>(r * vocab + v)]);
        double lse = 0.0;
        for (int64_t v = 0; v < vocab; ++v) lse += std::exp(logits[static_cast<size_t>(r * vocab + v)] - mx);
        lse = std::log(lse) + mx;
        loss += weights[static_cast<size_t>(r)] * (lse - logits[static_cast<size_t>(r * vocab + targets[static_cast<size_t>(r)])]);
    }
    return loss / wsum;
}

// Central finite differences of a double-valued function of double inputs.
inline std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double orig = x[i];
        x[i] = orig + h;
        double fp = f(x);
        x[i] = orig - h;
        double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double rel_err_d(const Tensor& got, const std::vector<double>& want, double floor = 1e-6) {
    double num = 0.0, den = floor;
    for (int64_t i = 0; i < got.size(); ++i) {
        num = std::max(num, std::fabs(static_cast<double>(got[i]) - want[static_cast<size_t>(i)]));
        den = std::max(den, std::fabs(want[static_cast<size_t>(i)]));
    }
    return num / den;
}

}  // namespace testutil
