#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

// Forward-only compute kernels shared by the autodiff ops and the packed
// inference path. Keeping one implementation of each loop means the float
// layers of an exported model reproduce the training graph exactly.

namespace apprentice::kernels {

// C (+)= A[m x k] * B[k x n], row-major.
template <typename Real>
void gemm(std::size_t m, std::size_t k, std::size_t n,
          const Real* a, const Real* b, Real* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, Real(0));
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A[m x k] * B^T where B is [n x k].
template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const Real* brow = b + j * k;
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C += A^T * B where A is [k x m], B is [k x n].
template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const Real* a, const Real* b, Real* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const Real* arow = a + p * m;
        const Real* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = arow[i];
            Real* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvShape {
    std::size_t batch, in_c, in_h, in_w;
    std::size_t out_c, kh, kw;
    std::size_t stride, pad;
    std::size_t out_h, out_w;
};

// col is [in_c*kh*kw, out_h*out_w] for one sample.
template <typename Real>
void im2col(const ConvShape& s, const Real* x, Real* col) {
    const std::size_t ohw = s.out_h * s.out_w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < s.in_c; ++c) {
        const Real* xc = x + c * s.in_h * s.in_w;
        for (std::size_t ki = 0; ki < s.kh; ++ki) {
            for (std::size_t kj = 0; kj < s.kw; ++kj, ++row) {
                Real* out = col + row * ohw;
                for (std::size_t oi = 0; oi < s.out_h; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * s.stride + ki) -
                                              static_cast<std::ptrdiff_t>(s.pad);
                    for (std::size_t oj = 0; oj < s.out_w; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * s.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(s.pad);
                        Real v = 0;
                        if (ii >= 0 && ii < static_cast<std::ptrdiff_t>(s.in_h) &&
                            jj >= 0 && jj < static_cast<std::ptrdiff_t>(s.in_w))
                            v = xc[static_cast<std::size_t>(ii) * s.in_w + static_cast<std::size_t>(jj)];
                        out[oi * s.out_w + oj] = v;
                    }
                }
            }
        }
    }
}

// Scatter-add of a column buffer back to an input-shaped gradient.
template <typename Real>
void col2im_add(const ConvShape& s, const Real* col, Real* dx) {
    const std::size_t ohw = s.out_h * s.out_w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < s.in_c; ++c) {
        Real* xc = dx + c * s.in_h * s.in_w;
        for (std::size_t ki = 0; ki < s.kh; ++ki) {
            for (std::size_t kj = 0; kj < s.kw; ++kj, ++row) {
                const Real* in = col + row * ohw;
                for (std::size_t oi = 0; oi < s.out_h; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * s.stride + ki) -
                                              static_cast<std::ptrdiff_t>(s.pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
                    for (std::size_t oj = 0; oj < s.out_w; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * s.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(s.pad);
                        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(s.in_w)) continue;
                        xc[static_cast<std::size_t>(ii) * s.in_w + static_cast<std::size_t>(jj)] +=
                            in[oi * s.out_w + oj];
                    }
                }
            }
        }
    }
}

// y[n] = w[out_c x (in_c*kh*kw)] * im2col(x[n]); both per-sample.
template <typename Real>
void conv2d_forward(const ConvShape& s, const Real* x, const Real* w, Real* y,
                    std::vector<Real>& col_scratch) {
    const std::size_t kdim = s.in_c * s.kh * s.kw;
    const std::size_t ohw = s.out_h * s.out_w;
    col_scratch.resize(kdim * ohw);
    for (std::size_t n = 0; n < s.batch; ++n) {
        im2col(s, x + n * s.in_c * s.in_h * s.in_w, col_scratch.data());
        gemm(s.out_c, kdim, ohw, w, col_scratch.data(), y + n * s.out_c * ohw, false);
    }
}

template <typename Real>
void softmax_row(const Real* z, Real* p, std::size_t c) {
    Real mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    Real sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
        p[j] = std::exp(z[j] - mx);
        sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
}

template <typename Real>
Real relu_val(Real v) {
    return v > Real(0) ? v : Real(0);
}

// Weight grid: clip to [-1,1], round to 2^(k-1)-1 levels per sign.
// Ties round half away from zero (std::round).
template <typename Real>
Real quantize_weight_val(Real v, int k) {
    const Real s = static_cast<Real>((1 << (k - 1)) - 1);
    const Real c = std::clamp(v, Real(-1), Real(1));
    return std::round(c * s) / s;
}

// Activation grid: clip to [0,1], 2^k - 1 levels.
template <typename Real>
Real quantize_act_val(Real v, int k) {
    const Real s = static_cast<Real>((1 << k) - 1);
    const Real c = std::clamp(v, Real(0), Real(1));
    return std::round(c * s) / s;
}

template <typename Real>
void batchnorm_eval_channel(const Real* x, Real* y, std::size_t count,
                            Real gamma, Real beta, Real mean, Real var, Real eps) {
    const Real invstd = Real(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < count; ++i) y[i] = gamma * (x[i] - mean) * invstd + beta;
}

} // namespace apprentice::kernels
