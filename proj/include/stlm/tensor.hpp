#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "stlm/error.hpp"

namespace stlm {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatrixRM<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatrixRM<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

inline Index shape_numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << " x ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Dense row-major tensor with an optional same-shape gradient buffer.
// Holds the values of every model weight and activation; ops in ops.hpp
// produce new tensors and record backward rules on a Tape.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad; // allocated lazily, same length as values
    bool requires_grad{false};

    Tensor() = default;
    explicit Tensor(Shape s, bool rg = false)
        : shape(std::move(s)), values(static_cast<size_t>(shape_numel(shape)), S(0)), requires_grad(rg) {
        for (Index d : shape) {
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
        }
    }

    Index numel() const { return static_cast<Index>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    Index dim(int i) const { return shape[static_cast<size_t>(i)]; }
    Index last_dim() const { return shape.empty() ? 1 : shape.back(); }
    // Leading dims collapsed: every tensor is viewable as [rows2d x last_dim].
    Index rows2d() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), S(0));
    }
    void zero_grad() {
        std::fill(grad.begin(), grad.end(), S(0));
    }

    MatMap<S> mat() { return MatMap<S>(values.data(), rows2d(), last_dim()); }
    ConstMatMap<S> mat() const { return ConstMatMap<S>(values.data(), rows2d(), last_dim()); }
    MatMap<S> grad_mat() {
        ensure_grad();
        return MatMap<S>(grad.data(), rows2d(), last_dim());
    }
    VecMap<S> vec() { return VecMap<S>(values.data(), numel()); }
    ConstVecMap<S> vec() const { return ConstVecMap<S>(values.data(), numel()); }
    VecMap<S> grad_vec() {
        ensure_grad();
        return VecMap<S>(grad.data(), numel());
    }

    S scalar() const {
        if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape));
        return values[0];
    }
};

template <typename S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

template <typename S>
TensorPtr<S> make_tensor(Shape shape, bool requires_grad = false) {
    return std::make_shared<Tensor<S>>(std::move(shape), requires_grad);
}

template <typename S>
TensorPtr<S> tensor_of(Shape shape, std::vector<S> values, bool requires_grad = false) {
    auto t = make_tensor<S>(std::move(shape), requires_grad);
    if (static_cast<Index>(values.size()) != t->numel())
        throw ShapeError("tensor_of: " + std::to_string(values.size()) + " values for shape " + shape_str(t->shape));
    t->values = std::move(values);
    return t;
}

template <typename S>
TensorPtr<S> full_like_shape(Shape shape, S value, bool requires_grad = false) {
    auto t = make_tensor<S>(std::move(shape), requires_grad);
    std::fill(t->values.begin(), t->values.end(), value);
    return t;
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op_name) {
    if (!ConstVecMap<S>(t.values.data(), t.numel()).allFinite())
        throw NumericError(std::string(op_name) + " produced NaN/Inf in tensor " + shape_str(t.shape));
}

} // namespace stlm
