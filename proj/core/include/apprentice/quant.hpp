#pragma once

#include <cstdint>
#include <string>

#include "apprentice/ops.hpp"

namespace apprentice {

// Per-network precision policy in the "<act>A,<weight>W" notation used by
// config files and CLI flags, e.g. "8A,4W". 32 means pass-through.
struct QuantSpec {
    int weight_bits = 32; // one of {2, 4, 8, 32}
    int act_bits = 32;    // one of {8, 32}
    bool exempt_first_last = true;

    bool is_full_precision() const { return weight_bits == 32 && act_bits == 32; }

    static QuantSpec parse(const std::string& text);
    std::string str() const; // renders "8A,4W"
};

enum class WeightQuant { None, Ternary, Bits4, Bits8 };
enum class ActQuant { None, Bits8 };

// Ternary weights: codes in {-1,0,+1} with one non-negative scale per layer.
// Dequantized value = scale * code.
template <typename Real>
struct TernaryTensor {
    std::vector<std::size_t> shape;
    std::vector<std::int8_t> codes;
    Real scale = 0;
};

// Threshold rule: delta = 0.7 * mean(|w|); survivors keep their sign and the
// scale is the mean of |w| over survivors. All reductions accumulate in the
// tensor's own precision, in index order — tests pin this bit-exactly.
template <typename Real>
TernaryTensor<Real> ternary_quantize(const Tensor<Real>& w) {
    if (w.numel() == 0) throw ShapeError("ternary_quantize: empty tensor");
    TernaryTensor<Real> out;
    out.shape = w.shape;
    out.codes.resize(w.numel());
    Real abs_sum = 0;
    for (Real v : w.data) abs_sum += std::abs(v);
    const Real delta = Real(0.7) * (abs_sum / static_cast<Real>(w.numel()));
    Real surv_sum = 0;
    std::size_t surv_count = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const Real v = w.data[i];
        if (std::abs(v) > delta) {
            out.codes[i] = v > Real(0) ? 1 : -1;
            surv_sum += std::abs(v);
            ++surv_count;
        } else {
            out.codes[i] = 0;
        }
    }
    out.scale = surv_count ? surv_sum / static_cast<Real>(surv_count) : Real(0);
    return out;
}

template <typename Real>
Tensor<Real> kbit_quantize_weights(const Tensor<Real>& w, int k) {
    if (k != 4 && k != 8) throw ShapeError(cat("weight quantization supports 4 or 8 bits, got ", k));
    Tensor<Real> q(w.shape);
    for (std::size_t i = 0; i < w.numel(); ++i)
        q.data[i] = kernels::quantize_weight_val(w.data[i], k);
    return q;
}

template <typename Real>
Tensor<Real> kbit_quantize_acts(const Tensor<Real>& a, int k) {
    if (k != 8) throw ShapeError(cat("activation quantization supports 8 bits, got ", k));
    Tensor<Real> q(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
        q.data[i] = kernels::quantize_act_val(a.data[i], k);
    return q;
}

// ---- fake-quantization graph nodes (straight-through gradients) ----
//
// Forward re-evaluates the quantizer from the latent full-precision input on
// every call; the latent tensor is what the optimizer updates.

// Ternary node: STE passes the gradient through everywhere (the ternary rule
// defines no clip range).
template <typename Real>
TensorPtr<Real> fake_quant_ternary(Tape<Real>& tape, const TensorPtr<Real>& w) {
    const auto t = ternary_quantize(*w);
    auto y = make_tensor<Real>(w->shape, w->requires_grad);
    for (std::size_t i = 0; i < w->numel(); ++i)
        y->data[i] = t.scale * static_cast<Real>(t.codes[i]);
    if (y->requires_grad) {
        tape.record([w, y] {
            w->ensure_grad();
            for (std::size_t i = 0; i < w->numel(); ++i) w->grad[i] += y->grad[i];
        });
    }
    return y;
}

// k-bit weight node: STE zeroes the gradient where the latent weight lies
// outside the clip range [-1,1].
template <typename Real>
TensorPtr<Real> fake_quant_weights_kbit(Tape<Real>& tape, const TensorPtr<Real>& w, int k) {
    if (k != 4 && k != 8) throw ShapeError(cat("weight quantization supports 4 or 8 bits, got ", k));
    auto y = make_tensor<Real>(w->shape, w->requires_grad);
    for (std::size_t i = 0; i < w->numel(); ++i)
        y->data[i] = kernels::quantize_weight_val(w->data[i], k);
    if (y->requires_grad) {
        tape.record([w, y] {
            w->ensure_grad();
            for (std::size_t i = 0; i < w->numel(); ++i)
                if (w->data[i] >= Real(-1) && w->data[i] <= Real(1)) w->grad[i] += y->grad[i];
        });
    }
    return y;
}

// 8-bit activation node for the non-negative post-ReLU range; STE zeroes the
// gradient outside [0,1].
template <typename Real>
TensorPtr<Real> fake_quant_acts_kbit(Tape<Real>& tape, const TensorPtr<Real>& a, int k) {
    if (k != 8) throw ShapeError(cat("activation quantization supports 8 bits, got ", k));
    auto y = make_tensor<Real>(a->shape, a->requires_grad);
    for (std::size_t i = 0; i < a->numel(); ++i)
        y->data[i] = kernels::quantize_act_val(a->data[i], k);
    if (y->requires_grad) {
        tape.record([a, y] {
            a->ensure_grad();
            for (std::size_t i = 0; i < a->numel(); ++i)
                if (a->data[i] >= Real(0) && a->data[i] <= Real(1)) a->grad[i] += y->grad[i];
        });
    }
    return y;
}

inline WeightQuant weight_quant_for_bits(int bits) {
    switch (bits) {
        case 2: return WeightQuant::Ternary;
        case 4: return WeightQuant::Bits4;
        case 8: return WeightQuant::Bits8;
        case 32: return WeightQuant::None;
    }
    throw ShapeError(cat("unsupported weight bit width ", bits));
}

class Model;

// Inserts fake-quantization nodes per the policy: weight nodes on every
// conv/fully-connected layer except (when exempt_first_last) the first and
// last, activation nodes on every activation between the first and last
// weight layer. 32-bit entries insert nothing.
void apply_policy(Model& model, const QuantSpec& spec);

struct QuantNodeCount {
    std::size_t weight_nodes = 0;
    std::size_t act_nodes = 0;
    std::size_t total() const { return weight_nodes + act_nodes; }
};

QuantNodeCount count_quant_nodes(Model& model);

} // namespace apprentice
