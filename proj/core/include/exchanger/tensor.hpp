#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "exchanger/errors.hpp"
#include "exchanger/random.hpp"

namespace exchanger {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major array participating in a differentiable computation
// graph. `values` always holds shape_numel(shape) entries; `grad` is
// empty until gradient flow first touches the tensor, then matches
// `values` in length.
//
// The scalar type is a template parameter: float is the working
// precision, double exists for finite-difference gradient checking.
template <typename S>
struct TensorT {
    Shape shape;
    std::vector<S> values;
    bool requires_grad = false;
    std::vector<S> grad;

    TensorT() = default;
    TensorT(Shape s, std::vector<S> v, bool rg = false)
        : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
            throw DimensionError("tensor: " + std::to_string(values.size()) +
                                 " values for shape " + shape_str(shape));
        }
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }

    std::int64_t rows() const { return rank() >= 1 ? shape[0] : 1; }
    std::int64_t cols() const {
        if (rank() == 0) return 1;
        std::int64_t c = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    S& at(std::int64_t i, std::int64_t j) { return values[static_cast<std::size_t>(i * cols() + j)]; }
    S at(std::int64_t i, std::int64_t j) const { return values[static_cast<std::size_t>(i * cols() + j)]; }

    bool has_grad() const { return !grad.empty(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), S(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));
    }
};

template <typename S>
using ValuePtr = std::shared_ptr<TensorT<S>>;

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
ValuePtr<S> make_tensor(Shape shape, std::vector<S> values, bool requires_grad = false) {
    return std::make_shared<TensorT<S>>(std::move(shape), std::move(values), requires_grad);
}

template <typename S>
ValuePtr<S> zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return make_tensor<S>(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), S(0)),
                          requires_grad);
}

template <typename S>
ValuePtr<S> full(Shape shape, S value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return make_tensor<S>(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), value),
                          requires_grad);
}

// 2D identity.
template <typename S>
ValuePtr<S> eye(std::int64_t n, bool requires_grad = false) {
    auto t = zeros<S>({n, n}, requires_grad);
    for (std::int64_t i = 0; i < n; ++i) t->values[static_cast<std::size_t>(i * n + i)] = S(1);
    return t;
}

template <typename S>
ValuePtr<S> randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    auto n = shape_numel(shape);
    std::vector<S> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<S>(rng.normal(0.0, stddev));
    return make_tensor<S>(std::move(shape), std::move(v), requires_grad);
}

template <typename S, typename T>
ValuePtr<S> cast_tensor(const TensorT<T>& src, bool requires_grad = false) {
    std::vector<S> v(src.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(src.values[i]);
    return make_tensor<S>(src.shape, std::move(v), requires_grad);
}

}  // namespace exchanger
