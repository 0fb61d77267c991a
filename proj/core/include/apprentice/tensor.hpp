#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "apprentice/common.hpp"

namespace apprentice {

// Dense row-major n-d array. The same type serves as a plain value and as a
// node in the autodiff graph: `grad` is allocated only when requires_grad
// is set.
template <typename Real>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shp, bool req_grad = false)
        : shape(std::move(shp)), data(shape_numel(shape), Real(0)), requires_grad(req_grad) {
        validate_shape();
        if (requires_grad) grad.assign(data.size(), Real(0));
    }

    Tensor(std::vector<std::size_t> shp, std::vector<Real> values, bool req_grad = false)
        : shape(std::move(shp)), data(std::move(values)), requires_grad(req_grad) {
        validate_shape();
        if (data.size() != shape_numel(shape))
            throw ShapeError(cat("tensor data length ", data.size(),
                                 " does not match shape ", shape_str(shape)));
        if (requires_grad) grad.assign(data.size(), Real(0));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), Real(0));
    }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    void validate_shape() const {
        for (auto e : shape)
            if (e == 0) throw ShapeError(cat("zero extent in shape ", shape_str(shape)));
    }
};

template <typename Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

template <typename Real>
TensorPtr<Real> make_tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    return std::make_shared<Tensor<Real>>(std::move(shape), requires_grad);
}

template <typename Real>
TensorPtr<Real> make_tensor(std::vector<std::size_t> shape, std::vector<Real> data,
                            bool requires_grad = false) {
    return std::make_shared<Tensor<Real>>(std::move(shape), std::move(data), requires_grad);
}

template <typename Real>
TensorPtr<Real> make_tensor(std::vector<std::size_t> shape, std::initializer_list<Real> data,
                            bool requires_grad = false) {
    return std::make_shared<Tensor<Real>>(std::move(shape), std::vector<Real>(data),
                                          requires_grad);
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* op) {
    if (!validation_mode()) return;
    if (!t.all_finite())
        throw std::runtime_error(cat("non-finite value produced by ", op));
}

} // namespace apprentice
