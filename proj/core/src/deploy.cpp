#include "apprentice/deploy.hpp"

#include <cstring>

#include "apprentice/io_formats.hpp"
#include "apprentice/kernels.hpp"

namespace apprentice {

namespace {

constexpr std::uint32_t kQuantizedVersion = 1;

std::size_t payload_bytes(std::size_t numel, int bits) {
    return (numel * static_cast<std::size_t>(bits) + 7) / 8;
}

} // namespace

PackedTensor pack_ternary(const std::vector<std::int8_t>& codes, std::vector<std::size_t> shape,
                          double scale) {
    if (codes.size() != shape_numel(shape))
        throw ShapeError(cat("code count ", codes.size(), " does not match shape ",
                             shape_str(shape)));
    PackedTensor t;
    t.bits = 2;
    t.shape = std::move(shape);
    t.scale = scale;
    t.payload.assign(payload_bytes(codes.size(), 2), 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        std::uint8_t code;
        switch (codes[i]) {
            case 0: code = 0b00; break;
            case 1: code = 0b01; break;
            case -1: code = 0b10; break;
            default:
                throw ShapeError(cat("element ", i, " holds ", int(codes[i]),
                                     ", not a ternary code"));
        }
        t.payload[i / 4] |= static_cast<std::uint8_t>(code << (2 * (i % 4)));
    }
    return t;
}

std::vector<std::int8_t> unpack_ternary(const PackedTensor& t) {
    if (t.bits != 2) throw ShapeError(cat("expected 2-bit payload, got ", t.bits));
    if (t.payload.size() != payload_bytes(t.numel(), 2))
        throw IoError(cat("ternary payload holds ", t.payload.size(), " bytes, shape ",
                          shape_str(t.shape), " needs ", payload_bytes(t.numel(), 2)));
    std::vector<std::int8_t> codes(t.numel());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const std::uint8_t code = (t.payload[i / 4] >> (2 * (i % 4))) & 0b11;
        switch (code) {
            case 0b00: codes[i] = 0; break;
            case 0b01: codes[i] = 1; break;
            case 0b10: codes[i] = -1; break;
            default: throw IoError(cat("invalid ternary code 11 at element ", i));
        }
    }
    return codes;
}

PackedTensor pack_indices(const std::vector<std::uint16_t>& indices, int bits,
                          std::vector<std::size_t> shape, double scale) {
    if (bits != 4 && bits != 8)
        throw ShapeError(cat("index packing supports 4 or 8 bits, got ", bits));
    if (indices.size() != shape_numel(shape))
        throw ShapeError(cat("index count ", indices.size(), " does not match shape ",
                             shape_str(shape)));
    const std::uint16_t max_index = static_cast<std::uint16_t>((1u << bits) - 2);
    PackedTensor t;
    t.bits = bits;
    t.shape = std::move(shape);
    t.scale = scale;
    t.payload.assign(payload_bytes(indices.size(), bits), 0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] > max_index)
            throw ShapeError(cat("element ", i, " holds index ", indices[i],
                                 ", beyond the ", bits, "-bit grid maximum ", max_index));
        if (bits == 8)
            t.payload[i] = static_cast<std::uint8_t>(indices[i]);
        else
            t.payload[i / 2] |= static_cast<std::uint8_t>(indices[i] << (4 * (i % 2)));
    }
    return t;
}

std::vector<std::uint16_t> unpack_indices(const PackedTensor& t) {
    if (t.bits != 4 && t.bits != 8)
        throw ShapeError(cat("expected 4- or 8-bit payload, got ", t.bits));
    if (t.payload.size() != payload_bytes(t.numel(), t.bits))
        throw IoError(cat("payload holds ", t.payload.size(), " bytes, shape ",
                          shape_str(t.shape), " needs ", payload_bytes(t.numel(), t.bits)));
    std::vector<std::uint16_t> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = t.bits == 8 ? t.payload[i]
                             : static_cast<std::uint16_t>((t.payload[i / 2] >> (4 * (i % 2))) & 0xF);
    return out;
}

std::vector<float> ternary_matvec(const PackedTensor& w, std::span<const float> x) {
    if (w.bits != 2 || w.shape.size() != 2)
        throw ShapeError(cat("ternary_matvec expects a 2-bit matrix, got ", w.bits, "-bit ",
                             shape_str(w.shape)));
    const std::size_t m = w.shape[0], k = w.shape[1];
    if (x.size() != k)
        throw ShapeError(cat("ternary_matvec shape mismatch: ", shape_str(w.shape),
                             " vs vector of length ", x.size()));
    const float scale = static_cast<float>(w.scale);
    std::vector<float> y(m, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        float acc = 0.0f;
        const std::size_t base = i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = base + j;
            const std::uint8_t code = (w.payload[idx / 4] >> (2 * (idx % 4))) & 0b11;
            if (code == 0b01)
                acc += x[j];
            else if (code == 0b10)
                acc -= x[j];
        }
        y[i] = scale * acc;
    }
    return y;
}

const QuantRecord* QuantizedCheckpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

namespace {

std::vector<std::uint8_t> float_payload(const std::vector<float>& data) {
    std::vector<std::uint8_t> out;
    out.reserve(data.size() * 4);
    for (float v : data) wire::put_f32(out, v);
    return out;
}

std::vector<float> floats_from_payload(const QuantRecord& r) {
    if (r.payload.size() != shape_numel(r.shape) * 4)
        throw IoError(cat("record '", r.name, "' payload holds ", r.payload.size(),
                          " bytes, shape ", shape_str(r.shape), " needs ",
                          shape_numel(r.shape) * 4));
    std::vector<float> out(shape_numel(r.shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = std::uint32_t(r.payload[4 * i]) |
                             (std::uint32_t(r.payload[4 * i + 1]) << 8) |
                             (std::uint32_t(r.payload[4 * i + 2]) << 16) |
                             (std::uint32_t(r.payload[4 * i + 3]) << 24);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

} // namespace

QuantizedCheckpoint export_quantized(Model& model) {
    QuantizedCheckpoint ckpt;
    ckpt.spec = model.spec();
    std::vector<std::string> packed_names;
    for (const WeightLayer* layer : model.weight_layers()) {
        if (layer->quant == WeightQuant::None) continue;
        QuantRecord rec;
        rec.name = layer->name + ".weight";
        rec.shape = layer->weight->shape;
        packed_names.push_back(rec.name);
        if (layer->quant == WeightQuant::Ternary) {
            const auto t = ternary_quantize(*layer->weight);
            const PackedTensor p = pack_ternary(t.codes, t.shape, double(t.scale));
            rec.bits = 2;
            rec.scale = p.scale;
            rec.payload = p.payload;
        } else {
            const int k = layer->quant == WeightQuant::Bits4 ? 4 : 8;
            const int levels = (1 << (k - 1)) - 1;
            const float s = static_cast<float>(levels);
            std::vector<std::uint16_t> indices(layer->weight->numel());
            for (std::size_t i = 0; i < indices.size(); ++i) {
                const float c = std::clamp(layer->weight->data[i], -1.0f, 1.0f);
                indices[i] = static_cast<std::uint16_t>(
                    static_cast<int>(std::round(c * s)) + levels);
            }
            const PackedTensor p =
                pack_indices(indices, k, layer->weight->shape, 1.0 / double(levels));
            rec.bits = k;
            rec.scale = p.scale;
            rec.payload = p.payload;
        }
        ckpt.records.push_back(std::move(rec));
    }
    for (const auto& p : model.named_state()) {
        bool packed = false;
        for (const auto& n : packed_names)
            if (n == p.name) packed = true;
        if (packed) continue;
        QuantRecord rec;
        rec.name = p.name;
        rec.shape = p.tensor->shape;
        rec.bits = 32;
        rec.payload = float_payload(p.tensor->data);
        ckpt.records.push_back(std::move(rec));
    }
    return ckpt;
}

void write_quantized(const std::string& path, const QuantizedCheckpoint& ckpt) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'A', 'P', 'Q', 'Z'});
    wire::put_u32(out, kQuantizedVersion);
    wire::put_u32(out, static_cast<std::uint32_t>(ckpt.records.size()));
    for (const auto& r : ckpt.records) {
        if (r.bits != 2 && r.bits != 4 && r.bits != 8 && r.bits != 32)
            throw IoError(cat("record '", r.name, "' has unsupported precision ", r.bits,
                              " bits"));
        wire::put_string(out, r.name);
        wire::put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
        for (auto e : r.shape) wire::put_u64(out, e);
        wire::put_u32(out, static_cast<std::uint32_t>(r.bits));
        wire::put_f64(out, r.scale);
        wire::put_u64(out, r.payload.size());
        out.insert(out.end(), r.payload.begin(), r.payload.end());
    }
    wire::write_file(path, out);
}

QuantizedCheckpoint read_quantized(const std::string& path, const ModelSpec& spec) {
    const auto buf = wire::read_file(path);
    wire::Cursor c{buf, 0, path};
    char magic[4];
    c.bytes(magic, 4);
    if (std::memcmp(magic, "APQZ", 4) != 0) c.fail("not an APQZ quantized checkpoint (bad magic)");
    const std::uint32_t version = c.u32();
    if (version != kQuantizedVersion) c.fail(cat("unsupported version ", version));
    QuantizedCheckpoint ckpt;
    ckpt.spec = spec;
    const std::uint32_t count = c.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        QuantRecord r;
        r.name = c.string();
        const std::uint32_t rank = c.u32();
        for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(c.u64());
        r.bits = static_cast<int>(c.u32());
        r.scale = c.f64();
        const std::uint64_t len = c.u64();
        const std::size_t expect = r.bits == 32 ? shape_numel(r.shape) * 4
                                                : payload_bytes(shape_numel(r.shape), r.bits);
        if (len != expect)
            c.fail(cat("record '", r.name, "' payload length ", len, ", expected ", expect));
        r.payload.resize(len);
        c.bytes(r.payload.data(), len);
        ckpt.records.push_back(std::move(r));
    }
    c.expect_end();
    return ckpt;
}

// ---- packed inference ----

namespace {

// One weight layer readied for execution: either a dense float matrix (fp32
// and dequantized k-bit grids) or ternary codes plus a scale.
struct ExecWeight {
    std::vector<std::size_t> shape;
    bool ternary = false;
    std::vector<float> dense;
    std::vector<std::int8_t> codes;
    float scale = 0;
};

ExecWeight load_weight(const QuantizedCheckpoint& ckpt, const std::string& name) {
    const QuantRecord* r = ckpt.find(name);
    if (!r) throw IoError(cat("quantized checkpoint is missing record '", name, "'"));
    ExecWeight w;
    w.shape = r->shape;
    if (r->bits == 2) {
        PackedTensor t{2, r->shape, r->payload, r->scale};
        w.ternary = true;
        w.codes = unpack_ternary(t);
        w.scale = static_cast<float>(r->scale);
    } else if (r->bits == 32) {
        w.dense = floats_from_payload(*r);
    } else {
        PackedTensor t{r->bits, r->shape, r->payload, r->scale};
        const auto indices = unpack_indices(t);
        const int levels = (1 << (r->bits - 1)) - 1;
        w.dense.resize(indices.size());
        // same float division as the training-graph quantizer, so values
        // match it bit for bit
        for (std::size_t i = 0; i < indices.size(); ++i)
            w.dense[i] = static_cast<float>(static_cast<int>(indices[i]) - levels) /
                         static_cast<float>(levels);
    }
    return w;
}

std::vector<float> load_floats(const QuantizedCheckpoint& ckpt, const std::string& name) {
    const QuantRecord* r = ckpt.find(name);
    if (!r) throw IoError(cat("quantized checkpoint is missing record '", name, "'"));
    if (r->bits != 32) throw IoError(cat("record '", name, "' is not full precision"));
    return floats_from_payload(*r);
}

void ternary_conv_forward(const kernels::ConvShape& s, const float* x,
                          const std::int8_t* codes, float scale, float* y) {
    const std::size_t ohw = s.out_h * s.out_w;
    for (std::size_t n = 0; n < s.batch; ++n) {
        const float* xn = x + n * s.in_c * s.in_h * s.in_w;
        for (std::size_t f = 0; f < s.out_c; ++f) {
            const std::int8_t* wf = codes + f * s.in_c * s.kh * s.kw;
            float* yf = y + (n * s.out_c + f) * ohw;
            for (std::size_t oi = 0; oi < s.out_h; ++oi)
                for (std::size_t oj = 0; oj < s.out_w; ++oj) {
                    float acc = 0.0f;
                    std::size_t widx = 0;
                    for (std::size_t c = 0; c < s.in_c; ++c) {
                        const float* xc = xn + c * s.in_h * s.in_w;
                        for (std::size_t ki = 0; ki < s.kh; ++ki) {
                            const std::ptrdiff_t ii =
                                static_cast<std::ptrdiff_t>(oi * s.stride + ki) -
                                static_cast<std::ptrdiff_t>(s.pad);
                            for (std::size_t kj = 0; kj < s.kw; ++kj, ++widx) {
                                const std::int8_t code = wf[widx];
                                if (code == 0) continue;
                                const std::ptrdiff_t jj =
                                    static_cast<std::ptrdiff_t>(oj * s.stride + kj) -
                                    static_cast<std::ptrdiff_t>(s.pad);
                                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(s.in_h) ||
                                    jj < 0 || jj >= static_cast<std::ptrdiff_t>(s.in_w))
                                    continue;
                                const float v = xc[std::size_t(ii) * s.in_w + std::size_t(jj)];
                                if (code > 0)
                                    acc += v;
                                else
                                    acc -= v;
                            }
                        }
                    }
                    yf[oi * s.out_w + oj] = scale * acc;
                }
        }
    }
}

struct Shape4 {
    std::size_t n, c, h, w;
};

class Runner {
public:
    Runner(const QuantizedCheckpoint& ckpt, const QuantSpec& quant)
        : ckpt_(ckpt), quant_(quant) {}

    std::vector<float> conv(const std::string& name, const std::vector<float>& x, Shape4& io,
                            std::size_t stride, std::size_t pad, bool bias) const {
        const ExecWeight w = load_weight(ckpt_, name + ".weight");
        kernels::ConvShape s{};
        s.batch = io.n;
        s.in_c = io.c;
        s.in_h = io.h;
        s.in_w = io.w;
        s.out_c = w.shape[0];
        s.kh = w.shape[2];
        s.kw = w.shape[3];
        s.stride = stride;
        s.pad = pad;
        s.out_h = (s.in_h + 2 * pad - s.kh) / stride + 1;
        s.out_w = (s.in_w + 2 * pad - s.kw) / stride + 1;
        std::vector<float> y(s.batch * s.out_c * s.out_h * s.out_w);
        if (w.ternary) {
            ternary_conv_forward(s, x.data(), w.codes.data(), w.scale, y.data());
        } else {
            std::vector<float> col;
            kernels::conv2d_forward(s, x.data(), w.dense.data(), y.data(), col);
        }
        if (bias) {
            const auto b = load_floats(ckpt_, name + ".bias");
            const std::size_t ohw = s.out_h * s.out_w;
            for (std::size_t n = 0; n < s.batch; ++n)
                for (std::size_t f = 0; f < s.out_c; ++f)
                    for (std::size_t j = 0; j < ohw; ++j)
                        y[(n * s.out_c + f) * ohw + j] += b[f];
        }
        io = {s.batch, s.out_c, s.out_h, s.out_w};
        return y;
    }

    std::vector<float> linear(const std::string& name, const std::vector<float>& x,
                              std::size_t rows) const {
        const ExecWeight w = load_weight(ckpt_, name + ".weight");
        const auto b = load_floats(ckpt_, name + ".bias");
        const std::size_t in = w.shape[0], out = w.shape[1];
        std::vector<float> y(rows * out, 0.0f);
        if (w.ternary) {
            // row-major [in,out] codes; run the sign-routed kernel on the
            // transposed view so each output is one packed row
            PackedTensor wt;
            wt.bits = 2;
            wt.shape = {out, in};
            wt.scale = w.scale;
            std::vector<std::int8_t> codes_t(in * out);
            for (std::size_t i = 0; i < in; ++i)
                for (std::size_t j = 0; j < out; ++j) codes_t[j * in + i] = w.codes[i * out + j];
            wt.payload = pack_ternary(codes_t, {out, in}, w.scale).payload;
            for (std::size_t r = 0; r < rows; ++r) {
                auto yr = ternary_matvec(
                    wt, std::span<const float>(x.data() + r * in, in));
                for (std::size_t j = 0; j < out; ++j) y[r * out + j] = yr[j] + b[j];
            }
        } else {
            kernels::gemm(rows, in, out, x.data(), w.dense.data(), y.data(), false);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < out; ++j) y[r * out + j] += b[j];
        }
        return y;
    }

    void relu_act(std::vector<float>& x) const {
        for (auto& v : x) v = kernels::relu_val(v);
        if (quant_.act_bits == 8)
            for (auto& v : x) v = kernels::quantize_act_val(v, 8);
    }

    void batchnorm_eval(const std::string& name, std::vector<float>& x, const Shape4& io) const {
        const auto gamma = load_floats(ckpt_, name + ".gamma");
        const auto beta = load_floats(ckpt_, name + ".beta");
        const auto mean = load_floats(ckpt_, name + ".running_mean");
        const auto var = load_floats(ckpt_, name + ".running_var");
        const std::size_t hw = io.h * io.w;
        for (std::size_t n = 0; n < io.n; ++n)
            for (std::size_t c = 0; c < io.c; ++c)
                kernels::batchnorm_eval_channel(x.data() + (n * io.c + c) * hw,
                                                x.data() + (n * io.c + c) * hw, hw, gamma[c],
                                                beta[c], mean[c], var[c], 1e-5f);
    }

    std::vector<float> global_avg_pool(const std::vector<float>& x, Shape4& io) const {
        const std::size_t hw = io.h * io.w;
        std::vector<float> y(io.n * io.c);
        for (std::size_t i = 0; i < io.n * io.c; ++i) {
            float sum = 0;
            for (std::size_t j = 0; j < hw; ++j) sum += x[i * hw + j];
            y[i] = sum / static_cast<float>(hw);
        }
        io.h = io.w = 1;
        return y;
    }

    std::vector<float> downsample_pad(const std::vector<float>& x, Shape4& io,
                                      std::size_t out_c) const {
        const std::size_t oh = (io.h + 1) / 2, ow = (io.w + 1) / 2;
        std::vector<float> y(io.n * out_c * oh * ow, 0.0f);
        for (std::size_t n = 0; n < io.n; ++n)
            for (std::size_t c = 0; c < io.c; ++c)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j)
                        y[((n * out_c + c) * oh + i) * ow + j] =
                            x[((n * io.c + c) * io.h + 2 * i) * io.w + 2 * j];
        io = {io.n, out_c, oh, ow};
        return y;
    }

private:
    const QuantizedCheckpoint& ckpt_;
    const QuantSpec& quant_;
};

} // namespace

PackedExecutor::PackedExecutor(QuantizedCheckpoint ckpt, QuantSpec quant)
    : ckpt_(std::move(ckpt)), quant_(std::move(quant)) {
    ckpt_.spec.validate();
}

Tensor<float> PackedExecutor::logits(const Tensor<float>& x) const {
    if (x.rank() != 4) throw ShapeError(cat("expected NCHW input, got ", shape_str(x.shape)));
    Runner run(ckpt_, quant_);
    const ModelSpec& spec = ckpt_.spec;
    Shape4 io{x.shape[0], x.shape[1], x.shape[2], x.shape[3]};
    std::vector<float> h = x.data;

    if (spec.family == "mnist_mlp") {
        const std::size_t rows = io.n;
        for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
            h = run.linear(cat("fc", i + 1), h, rows);
            if (i + 2 < spec.widths.size()) run.relu_act(h);
        }
        return Tensor<float>({rows, static_cast<std::size_t>(spec.widths.back())}, h);
    }
    if (spec.family == "mnist_convnet") {
        h = run.conv("conv1", h, io, 2, 1, true);
        run.relu_act(h);
        h = run.conv("conv2", h, io, 2, 1, true);
        run.relu_act(h);
        h = run.linear("fc1", h, io.n);
        run.relu_act(h);
        h = run.linear("fc2", h, io.n);
        return Tensor<float>({io.n, static_cast<std::size_t>(spec.num_classes)}, h);
    }
    if (spec.family == "cifar_resnet") {
        h = run.conv("conv1", h, io, 1, 1, false);
        const std::size_t widths[3] = {16, 32, 64};
        std::size_t in_c = 16;
        for (int s = 0; s < 3; ++s) {
            for (int b = 0; b < spec.n; ++b) {
                const std::string base = cat("stage", s + 1, ".block", b);
                const bool down = s > 0 && b == 0;
                const std::size_t out_c = widths[s];
                std::vector<float> inner = h;
                Shape4 inner_io = io;
                run.batchnorm_eval(base + ".bn1", inner, inner_io);
                run.relu_act(inner);
                inner = run.conv(base + ".conv1", inner, inner_io, 1, 1, false);
                if (down) inner = run.downsample_pad(inner, inner_io, out_c);
                run.batchnorm_eval(base + ".bn2", inner, inner_io);
                run.relu_act(inner);
                inner = run.conv(base + ".conv2", inner, inner_io, 1, 1, false);
                std::vector<float> shortcut = h;
                Shape4 short_io = io;
                if (down) shortcut = run.downsample_pad(shortcut, short_io, out_c);
                for (std::size_t i = 0; i < inner.size(); ++i) inner[i] += shortcut[i];
                h = std::move(inner);
                io = inner_io;
                in_c = out_c;
            }
        }
        (void)in_c;
        run.batchnorm_eval("bn_final", h, io);
        run.relu_act(h);
        h = run.global_avg_pool(h, io);
        h = run.linear("fc", h, io.n);
        return Tensor<float>({io.n, static_cast<std::size_t>(spec.num_classes)}, h);
    }
    throw ConfigError(cat("packed execution does not support family '", spec.family, "'"));
}

} // namespace apprentice
