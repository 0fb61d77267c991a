#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "apprentice/io_formats.hpp"
#include "apprentice/ops.hpp"
#include "apprentice/rng.hpp"
#include "apprentice/sgd.hpp"

namespace testutil {

using namespace apprentice;

template <typename Real>
TensorPtr<Real> rand_tensor(Rng& rng, std::vector<std::size_t> shape, Real lo, Real hi,
                            bool requires_grad = true) {
    auto t = make_tensor<Real>(std::move(shape), requires_grad);
    for (auto& v : t->data) v = static_cast<Real>(rng.uniform(double(lo), double(hi)));
    return t;
}

// Scalar projection sum(y * r); lets the finite-difference harness reduce any
// op output to a scalar without touching the loss ops under test.
template <typename Real>
TensorPtr<Real> project(Tape<Real>& tape, const TensorPtr<Real>& y,
                        std::shared_ptr<std::vector<Real>> r) {
    if (r->size() != y->numel()) throw ShapeError("projection length mismatch");
    auto out = make_tensor<Real>(std::vector<std::size_t>{1}, y->requires_grad);
    for (std::size_t i = 0; i < y->numel(); ++i) out->data[0] += y->data[i] * (*r)[i];
    if (out->requires_grad) {
        tape.record([y, r, out] {
            y->ensure_grad();
            for (std::size_t i = 0; i < y->numel(); ++i) y->grad[i] += (*r)[i] * out->grad[0];
        });
    }
    return out;
}

template <typename Real>
std::shared_ptr<std::vector<Real>> rand_projection(Rng& rng, std::size_t n) {
    auto r = std::make_shared<std::vector<Real>>(n);
    for (auto& v : *r) v = static_cast<Real>(rng.uniform(-1.0, 1.0));
    return r;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central finite differences against the recorded backward pass. `forward`
// must rebuild the graph from the leaves on every call (define-by-run).
inline double finite_diff_max_err(
    const std::vector<TensorPtr<double>>& leaves,
    const std::function<TensorPtr<double>(Tape<double>&)>& forward, double eps = 1e-5) {
    Tape<double> tape;
    zero_grads(leaves);
    auto root = forward(tape);
    tape.backward(root);
    std::vector<std::vector<double>> analytic;
    for (const auto& l : leaves) analytic.push_back(l->grad);

    double max_err = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = *leaves[li];
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const double orig = leaf.data[i];
            leaf.data[i] = orig + eps;
            Tape<double> t1;
            const double f1 = forward(t1)->data[0];
            leaf.data[i] = orig - eps;
            Tape<double> t2;
            const double f2 = forward(t2)->data[0];
            leaf.data[i] = orig;
            const double numeric = (f1 - f2) / (2.0 * eps);
            max_err = std::max(max_err, rel_err(analytic[li][i], numeric));
        }
    }
    return max_err;
}

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("apprentice_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str(const std::string& child = "") const {
        return child.empty() ? path.string() : (path / child).string();
    }
};

inline std::vector<std::uint8_t> slurp(const std::string& path) {
    return apprentice::wire::read_file(path);
}

// Runs fn, returns the message of the expected exception ("" if none thrown).
template <typename E, typename Fn>
std::string catch_message(Fn&& fn) {
    try {
        fn();
    } catch (const E& e) {
        return e.what();
    } catch (...) {
    }
    return "";
}

} // namespace testutil
