#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "apprentice/autograd.hpp"
#include "apprentice/kernels.hpp"

// Differentiable primitives. Each op validates shapes, computes the forward
// value, and (when any input requires grad) records a backward closure that
// accumulates into the inputs' grad buffers.

namespace apprentice {

template <typename Real>
TensorPtr<Real> matmul(Tape<Real>& tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError(cat("matmul shape mismatch: ", shape_str(a->shape), " vs ",
                             shape_str(b->shape)));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto y = make_tensor<Real>({m, n}, a->requires_grad || b->requires_grad);
    kernels::gemm(m, k, n, a->data.data(), b->data.data(), y->data.data(), false);
    check_finite(*y, "matmul");
    if (y->requires_grad) {
        tape.record([a, b, y, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad(); // dA += dY * B^T
                kernels::gemm_nt(m, n, k, y->grad.data(), b->data.data(), a->grad.data());
            }
            if (b->requires_grad) {
                b->ensure_grad(); // dB += A^T * dY
                kernels::gemm_tn(k, m, n, a->data.data(), y->grad.data(), b->grad.data());
            }
        });
    }
    return y;
}

inline kernels::ConvShape conv_shape(const std::vector<std::size_t>& x,
                                     const std::vector<std::size_t>& w,
                                     std::size_t stride, std::size_t pad) {
    kernels::ConvShape s{};
    s.batch = x[0]; s.in_c = x[1]; s.in_h = x[2]; s.in_w = x[3];
    s.out_c = w[0]; s.kh = w[2]; s.kw = w[3];
    s.stride = stride; s.pad = pad;
    const std::size_t ph = s.in_h + 2 * pad, pw = s.in_w + 2 * pad;
    if (s.kh > ph || s.kw > pw)
        throw ShapeError(cat("conv2d kernel ", shape_str(w), " larger than padded input ",
                             shape_str(x), " with pad ", pad));
    if ((ph - s.kh) % stride != 0 || (pw - s.kw) % stride != 0)
        throw ShapeError(cat("conv2d output extent not integral for input ", shape_str(x),
                             ", kernel ", shape_str(w), ", stride ", stride, ", pad ", pad));
    s.out_h = (ph - s.kh) / stride + 1;
    s.out_w = (pw - s.kw) / stride + 1;
    return s;
}

// Cross-correlation convention; x [N,C,H,W], w [F,C,kh,kw].
template <typename Real>
TensorPtr<Real> conv2d(Tape<Real>& tape, const TensorPtr<Real>& x, const TensorPtr<Real>& w,
                       std::size_t stride, std::size_t pad) {
    if (x->rank() != 4 || w->rank() != 4 || x->shape[1] != w->shape[1])
        throw ShapeError(cat("conv2d shape mismatch: input ", shape_str(x->shape),
                             " vs kernel ", shape_str(w->shape)));
    const auto s = conv_shape(x->shape, w->shape, stride, pad);
    auto y = make_tensor<Real>({s.batch, s.out_c, s.out_h, s.out_w},
                               x->requires_grad || w->requires_grad);
    std::vector<Real> col;
    kernels::conv2d_forward(s, x->data.data(), w->data.data(), y->data.data(), col);
    check_finite(*y, "conv2d");
    if (y->requires_grad) {
        // im2col is recomputed in the backward pass instead of captured;
        // it is cheap next to the GEMMs and keeps tape memory flat.
        tape.record([x, w, y, s] {
            const std::size_t kdim = s.in_c * s.kh * s.kw;
            const std::size_t ohw = s.out_h * s.out_w;
            std::vector<Real> col(kdim * ohw);
            std::vector<Real> dcol;
            if (x->requires_grad) {
                x->ensure_grad();
                dcol.resize(kdim * ohw);
            }
            if (w->requires_grad) w->ensure_grad();
            for (std::size_t n = 0; n < s.batch; ++n) {
                im2col(s, x->data.data() + n * s.in_c * s.in_h * s.in_w, col.data());
                const Real* dy = y->grad.data() + n * s.out_c * ohw;
                if (w->requires_grad) // dW += dY * col^T
                    kernels::gemm_nt(s.out_c, ohw, kdim, dy, col.data(), w->grad.data());
                if (x->requires_grad) { // dcol = W^T * dY, scattered back
                    std::fill(dcol.begin(), dcol.end(), Real(0));
                    kernels::gemm_tn(kdim, s.out_c, ohw, w->data.data(), dy, dcol.data());
                    kernels::col2im_add(s, dcol.data(),
                                        x->grad.data() + n * s.in_c * s.in_h * s.in_w);
                }
            }
        });
    }
    return y;
}

template <typename Real>
struct BatchNormState {
    TensorPtr<Real> running_mean;
    TensorPtr<Real> running_var;
    Real decay = Real(0.9);
    Real eps = Real(1e-5);
};

// Spatial batch normalization over [N,C,H,W]. Training mode normalizes by
// batch statistics (biased variance) and folds them into the running stats;
// eval mode uses the running stats.
template <typename Real>
TensorPtr<Real> batchnorm(Tape<Real>& tape, const TensorPtr<Real>& x, const TensorPtr<Real>& gamma,
                          const TensorPtr<Real>& beta, BatchNormState<Real>& state, Mode mode) {
    if (x->rank() != 4)
        throw ShapeError(cat("batchnorm expects NCHW input, got ", shape_str(x->shape)));
    const std::size_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
    if (gamma->numel() != c || beta->numel() != c)
        throw ShapeError(cat("batchnorm channel mismatch: input ", shape_str(x->shape),
                             " gamma ", shape_str(gamma->shape), " beta ", shape_str(beta->shape)));
    const std::size_t m = n * hw;
    auto y = make_tensor<Real>(x->shape, x->requires_grad || gamma->requires_grad ||
                                             beta->requires_grad);

    auto mean = std::make_shared<std::vector<Real>>(c, Real(0));
    auto invstd = std::make_shared<std::vector<Real>>(c, Real(0));
    const bool training = mode == Mode::Train;
    for (std::size_t ch = 0; ch < c; ++ch) {
        Real mu, var;
        if (training) {
            Real sum = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const Real* p = x->data.data() + (i * c + ch) * hw;
                for (std::size_t j = 0; j < hw; ++j) sum += p[j];
            }
            mu = sum / static_cast<Real>(m);
            Real sq = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const Real* p = x->data.data() + (i * c + ch) * hw;
                for (std::size_t j = 0; j < hw; ++j) {
                    const Real d = p[j] - mu;
                    sq += d * d;
                }
            }
            var = sq / static_cast<Real>(m);
            state.running_mean->data[ch] = state.decay * state.running_mean->data[ch] +
                                           (Real(1) - state.decay) * mu;
            state.running_var->data[ch] = state.decay * state.running_var->data[ch] +
                                          (Real(1) - state.decay) * var;
        } else {
            mu = state.running_mean->data[ch];
            var = state.running_var->data[ch];
        }
        (*mean)[ch] = mu;
        (*invstd)[ch] = Real(1) / std::sqrt(var + state.eps);
        const Real g = gamma->data[ch], b = beta->data[ch], is = (*invstd)[ch];
        for (std::size_t i = 0; i < n; ++i) {
            const Real* px = x->data.data() + (i * c + ch) * hw;
            Real* py = y->data.data() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) py[j] = g * (px[j] - mu) * is + b;
        }
    }
    check_finite(*y, "batchnorm");

    if (y->requires_grad) {
        tape.record([x, gamma, beta, y, mean, invstd, n, c, hw, m, training] {
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Real mu = (*mean)[ch], is = (*invstd)[ch], g = gamma->data[ch];
                Real sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const Real* px = x->data.data() + (i * c + ch) * hw;
                    const Real* pdy = y->grad.data() + (i * c + ch) * hw;
                    for (std::size_t j = 0; j < hw; ++j) {
                        sum_dy += pdy[j];
                        sum_dy_xhat += pdy[j] * (px[j] - mu) * is;
                    }
                }
                if (gamma->requires_grad) gamma->grad[ch] += sum_dy_xhat;
                if (beta->requires_grad) beta->grad[ch] += sum_dy;
                if (!x->requires_grad) continue;
                for (std::size_t i = 0; i < n; ++i) {
                    const Real* px = x->data.data() + (i * c + ch) * hw;
                    const Real* pdy = y->grad.data() + (i * c + ch) * hw;
                    Real* pdx = x->grad.data() + (i * c + ch) * hw;
                    if (training) {
                        const Real inv_m = Real(1) / static_cast<Real>(m);
                        for (std::size_t j = 0; j < hw; ++j) {
                            const Real xhat = (px[j] - mu) * is;
                            pdx[j] += g * is * (pdy[j] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
                        }
                    } else {
                        for (std::size_t j = 0; j < hw; ++j) pdx[j] += g * is * pdy[j];
                    }
                }
            }
        });
    }
    return y;
}

template <typename Real>
TensorPtr<Real> relu(Tape<Real>& tape, const TensorPtr<Real>& x) {
    auto y = make_tensor<Real>(x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->numel(); ++i) y->data[i] = kernels::relu_val(x->data[i]);
    if (y->requires_grad) {
        tape.record([x, y] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i)
                if (x->data[i] > Real(0)) x->grad[i] += y->grad[i];
        });
    }
    return y;
}

template <typename Real>
TensorPtr<Real> clip(Tape<Real>& tape, const TensorPtr<Real>& x, Real lo, Real hi) {
    auto y = make_tensor<Real>(x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->numel(); ++i) y->data[i] = std::clamp(x->data[i], lo, hi);
    if (y->requires_grad) {
        tape.record([x, y, lo, hi] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i)
                if (x->data[i] >= lo && x->data[i] <= hi) x->grad[i] += y->grad[i];
        });
    }
    return y;
}

template <typename Real>
TensorPtr<Real> add(Tape<Real>& tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    if (a->shape != b->shape)
        throw ShapeError(cat("add shape mismatch: ", shape_str(a->shape), " vs ",
                             shape_str(b->shape)));
    auto y = make_tensor<Real>(a->shape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < y->numel(); ++i) y->data[i] = a->data[i] + b->data[i];
    check_finite(*y, "add");
    if (y->requires_grad) {
        tape.record([a, b, y] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < y->numel(); ++i) a->grad[i] += y->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < y->numel(); ++i) b->grad[i] += y->grad[i];
            }
        });
    }
    return y;
}

// x [N,C] plus a length-C bias broadcast over rows.
template <typename Real>
TensorPtr<Real> bias_add(Tape<Real>& tape, const TensorPtr<Real>& x, const TensorPtr<Real>& b) {
    if (x->rank() != 2 || b->numel() != x->shape[1])
        throw ShapeError(cat("bias_add shape mismatch: ", shape_str(x->shape), " vs ",
                             shape_str(b->shape)));
    const std::size_t n = x->shape[0], c = x->shape[1];
    auto y = make_tensor<Real>(x->shape, x->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) y->data[i * c + j] = x->data[i * c + j] + b->data[j];
    if (y->requires_grad) {
        tape.record([x, b, y, n, c] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < n * c; ++i) x->grad[i] += y->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) b->grad[j] += y->grad[i * c + j];
            }
        });
    }
    return y;
}

template <typename Real>
TensorPtr<Real> scale(Tape<Real>& tape, const TensorPtr<Real>& x, Real factor) {
    auto y = make_tensor<Real>(x->shape, x->requires_grad);
    for (std::size_t i = 0; i < x->numel(); ++i) y->data[i] = factor * x->data[i];
    if (y->requires_grad) {
        tape.record([x, y, factor] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += factor * y->grad[i];
        });
    }
    return y;
}

// y = sum_i coeff_i * term_i, all terms the same shape.
template <typename Real>
TensorPtr<Real> weighted_sum(Tape<Real>& tape,
                             const std::vector<std::pair<Real, TensorPtr<Real>>>& terms) {
    if (terms.empty()) throw ShapeError("weighted_sum needs at least one term");
    bool req = false;
    for (const auto& [c, t] : terms) {
        if (t->shape != terms.front().second->shape)
            throw ShapeError(cat("weighted_sum shape mismatch: ", shape_str(t->shape), " vs ",
                                 shape_str(terms.front().second->shape)));
        req = req || t->requires_grad;
    }
    auto y = make_tensor<Real>(terms.front().second->shape, req);
    for (const auto& [c, t] : terms)
        for (std::size_t i = 0; i < y->numel(); ++i) y->data[i] += c * t->data[i];
    if (req) {
        tape.record([terms, y] {
            for (const auto& [c, t] : terms) {
                if (!t->requires_grad) continue;
                t->ensure_grad();
                for (std::size_t i = 0; i < y->numel(); ++i) t->grad[i] += c * y->grad[i];
            }
        });
    }
    return y;
}

// Row-wise softmax over the last dimension, computed with max-subtraction.
template <typename Real>
TensorPtr<Real> softmax(Tape<Real>& tape, const TensorPtr<Real>& z) {
    if (z->rank() < 1 || z->shape.back() < 1)
        throw ShapeError(cat("softmax needs at least one class, got ", shape_str(z->shape)));
    const std::size_t c = z->shape.back();
    const std::size_t rows = z->numel() / c;
    auto p = make_tensor<Real>(z->shape, z->requires_grad);
    for (std::size_t r = 0; r < rows; ++r)
        kernels::softmax_row(z->data.data() + r * c, p->data.data() + r * c, c);
    check_finite(*p, "softmax");
    if (p->requires_grad) {
        tape.record([z, p, rows, c] {
            z->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* pv = p->data.data() + r * c;
                const Real* dy = p->grad.data() + r * c;
                Real dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += dy[j] * pv[j];
                Real* dz = z->grad.data() + r * c;
                for (std::size_t j = 0; j < c; ++j) dz[j] += pv[j] * (dy[j] - dot);
            }
        });
    }
    return p;
}

// Mean over rows of -sum_k target_k * log(pred_k). Predictions are clamped
// to [1e-12, 1] before the log.
template <typename Real>
TensorPtr<Real> cross_entropy(Tape<Real>& tape, const TensorPtr<Real>& target,
                              const TensorPtr<Real>& pred) {
    if (target->shape != pred->shape)
        throw ShapeError(cat("cross_entropy shape mismatch: target ", shape_str(target->shape),
                             " vs pred ", shape_str(pred->shape)));
    const std::size_t c = pred->shape.back();
    const std::size_t rows = pred->numel() / c;
    constexpr Real kClampLo = Real(1e-12);
    auto y = make_tensor<Real>(std::vector<std::size_t>{1},
                               target->requires_grad || pred->requires_grad);
    Real total = 0;
    for (std::size_t i = 0; i < pred->numel(); ++i) {
        const Real p = std::clamp(pred->data[i], kClampLo, Real(1));
        total -= target->data[i] * std::log(p);
    }
    y->data[0] = total / static_cast<Real>(rows);
    check_finite(*y, "cross_entropy");
    if (y->requires_grad) {
        tape.record([target, pred, y, rows, kClampLo] {
            const Real up = y->grad[0] / static_cast<Real>(rows);
            if (pred->requires_grad) {
                pred->ensure_grad();
                for (std::size_t i = 0; i < pred->numel(); ++i) {
                    const Real pv = pred->data[i];
                    if (pv >= kClampLo && pv <= Real(1))
                        pred->grad[i] -= up * target->data[i] / std::clamp(pv, kClampLo, Real(1));
                }
            }
            if (target->requires_grad) {
                target->ensure_grad();
                for (std::size_t i = 0; i < pred->numel(); ++i) {
                    const Real pv = std::clamp(pred->data[i], kClampLo, Real(1));
                    target->grad[i] -= up * std::log(pv);
                }
            }
        });
    }
    return y;
}

// [N,C,H,W] -> [N,C] spatial mean.
template <typename Real>
TensorPtr<Real> global_avg_pool(Tape<Real>& tape, const TensorPtr<Real>& x) {
    if (x->rank() != 4)
        throw ShapeError(cat("global_avg_pool expects NCHW input, got ", shape_str(x->shape)));
    const std::size_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
    auto y = make_tensor<Real>({n, c}, x->requires_grad);
    for (std::size_t i = 0; i < n * c; ++i) {
        Real sum = 0;
        const Real* p = x->data.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) sum += p[j];
        y->data[i] = sum / static_cast<Real>(hw);
    }
    if (y->requires_grad) {
        tape.record([x, y, n, c, hw] {
            x->ensure_grad();
            for (std::size_t i = 0; i < n * c; ++i) {
                const Real g = y->grad[i] / static_cast<Real>(hw);
                Real* p = x->grad.data() + i * hw;
                for (std::size_t j = 0; j < hw; ++j) p[j] += g;
            }
        });
    }
    return y;
}

// Collapse all trailing dims: [N, ...] -> [N, prod(...)].
template <typename Real>
TensorPtr<Real> flatten(Tape<Real>& tape, const TensorPtr<Real>& x) {
    if (x->rank() < 2)
        throw ShapeError(cat("flatten expects rank >= 2, got ", shape_str(x->shape)));
    const std::size_t n = x->shape[0], rest = x->numel() / n;
    auto y = make_tensor<Real>({n, rest}, x->data, x->requires_grad);
    if (y->requires_grad) {
        tape.record([x, y] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += y->grad[i];
        });
    }
    return y;
}

// Parameter-free shortcut for stage transitions: take every other pixel and
// zero-pad the channel dimension up to out_c.
template <typename Real>
TensorPtr<Real> downsample_pad_channels(Tape<Real>& tape, const TensorPtr<Real>& x,
                                        std::size_t out_c) {
    if (x->rank() != 4 || out_c < x->shape[1])
        throw ShapeError(cat("downsample_pad_channels: bad target channels ", out_c,
                             " for input ", shape_str(x->shape)));
    const std::size_t n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
    auto y = make_tensor<Real>({n, out_c, oh, ow}, x->requires_grad);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oi = 0; oi < oh; ++oi)
                for (std::size_t oj = 0; oj < ow; ++oj)
                    y->data[((i * out_c + ch) * oh + oi) * ow + oj] =
                        x->data[((i * c + ch) * h + 2 * oi) * w + 2 * oj];
    if (y->requires_grad) {
        tape.record([x, y, n, c, h, w, oh, ow, out_c] {
            x->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t oi = 0; oi < oh; ++oi)
                        for (std::size_t oj = 0; oj < ow; ++oj)
                            x->grad[((i * c + ch) * h + 2 * oi) * w + 2 * oj] +=
                                y->grad[((i * out_c + ch) * oh + oi) * ow + oj];
        });
    }
    return y;
}

// 0.5 * coeff * sum of squared entries over all listed tensors.
template <typename Real>
TensorPtr<Real> l2_penalty(Tape<Real>& tape, const std::vector<TensorPtr<Real>>& params,
                           Real coeff) {
    bool req = false;
    Real total = 0;
    for (const auto& p : params) {
        req = req || p->requires_grad;
        for (Real v : p->data) total += v * v;
    }
    auto y = make_tensor<Real>(std::vector<std::size_t>{1}, req);
    y->data[0] = Real(0.5) * coeff * total;
    if (req) {
        tape.record([params, y, coeff] {
            const Real up = coeff * y->grad[0];
            for (const auto& p : params) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < p->numel(); ++i) p->grad[i] += up * p->data[i];
            }
        });
    }
    return y;
}

// Copy of x that is cut off from the graph.
template <typename Real>
TensorPtr<Real> detach(const TensorPtr<Real>& x) {
    return make_tensor<Real>(x->shape, x->data, false);
}

template <typename Real>
std::size_t argmax_row(const Tensor<Real>& t, std::size_t row) {
    const std::size_t c = t.shape.back();
    const Real* p = t.data.data() + row * c;
    return static_cast<std::size_t>(std::max_element(p, p + c) - p);
}

} // namespace apprentice
