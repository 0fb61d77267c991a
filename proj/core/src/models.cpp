#include "apprentice/models.hpp"

#include <cmath>

#include "apprentice/rng.hpp"

namespace apprentice {

void ModelSpec::validate() const {
    if (num_classes < 2) throw ConfigError(cat("num_classes must be >= 2, got ", num_classes));
    if (family == "cifar_resnet") {
        if (n < 1) throw ConfigError(cat("cifar_resnet requires n >= 1, got ", n));
    } else if (family == "mnist_mlp") {
        if (widths.size() < 2)
            throw ConfigError("mnist_mlp requires widths with at least input and output sizes");
        for (int w : widths)
            if (w < 1) throw ConfigError(cat("mnist_mlp width must be positive, got ", w));
    } else if (family == "mnist_convnet") {
        if (widths.size() != 3)
            throw ConfigError("mnist_convnet requires widths = {conv1, conv2, fc_hidden}");
        for (int w : widths)
            if (w < 1) throw ConfigError(cat("mnist_convnet width must be positive, got ", w));
    } else {
        throw ConfigError(cat("unknown model family '", family,
                              "' (expected cifar_resnet, mnist_mlp or mnist_convnet)"));
    }
}

std::vector<std::size_t> ModelSpec::input_shape() const {
    if (family == "cifar_resnet") return {3, 32, 32};
    return {1, 28, 28};
}

namespace {

TensorPtr<float> he_normal(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    auto t = make_tensor<float>(std::move(shape), true);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t->data) v = static_cast<float>(std * rng.normal());
    return t;
}

Conv2dLayer make_conv(Rng& rng, std::string name, std::size_t in_c, std::size_t out_c,
                      std::size_t k, std::size_t stride, std::size_t pad, bool with_bias) {
    Conv2dLayer l;
    l.name = std::move(name);
    l.weight = he_normal(rng, {out_c, in_c, k, k}, in_c * k * k);
    l.stride = stride;
    l.pad = pad;
    if (with_bias) l.bias = make_tensor<float>({out_c}, true);
    return l;
}

LinearLayer make_linear(Rng& rng, std::string name, std::size_t in, std::size_t out) {
    LinearLayer l;
    l.name = std::move(name);
    l.weight = he_normal(rng, {in, out}, in);
    l.bias = make_tensor<float>({out}, true);
    return l;
}

BatchNormLayer make_bn(std::string name, std::size_t channels) {
    BatchNormLayer l;
    l.name = std::move(name);
    l.gamma = make_tensor<float>({channels}, true);
    std::fill(l.gamma->data.begin(), l.gamma->data.end(), 1.0f);
    l.beta = make_tensor<float>({channels}, true);
    l.state.running_mean = make_tensor<float>({channels}, false);
    l.state.running_var = make_tensor<float>({channels}, false);
    std::fill(l.state.running_var->data.begin(), l.state.running_var->data.end(), 1.0f);
    return l;
}

void push_state(std::vector<NamedTensor>& out, const Conv2dLayer& l) {
    out.push_back({l.name + ".weight", l.weight, true, true});
    if (l.bias) out.push_back({l.name + ".bias", l.bias, true, false});
}

void push_state(std::vector<NamedTensor>& out, const LinearLayer& l) {
    out.push_back({l.name + ".weight", l.weight, true, true});
    out.push_back({l.name + ".bias", l.bias, true, false});
}

void push_state(std::vector<NamedTensor>& out, const BatchNormLayer& l) {
    out.push_back({l.name + ".gamma", l.gamma, true, false});
    out.push_back({l.name + ".beta", l.beta, true, false});
    out.push_back({l.name + ".running_mean", l.state.running_mean, false, false});
    out.push_back({l.name + ".running_var", l.state.running_var, false, false});
}

// Channel bias broadcast over NCHW.
TensorPtr<float> channel_bias_add(Tape<float>& tape, const TensorPtr<float>& x,
                                  const TensorPtr<float>& b) {
    if (x->rank() != 4 || b->numel() != x->shape[1])
        throw ShapeError(cat("channel bias shape mismatch: ", shape_str(x->shape), " vs ",
                             shape_str(b->shape)));
    const std::size_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
    auto y = make_tensor<float>(x->shape, x->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float bv = b->data[ch];
            const float* px = x->data.data() + (i * c + ch) * hw;
            float* py = y->data.data() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) py[j] = px[j] + bv;
        }
    if (y->requires_grad) {
        tape.record([x, b, y, n, c, hw] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += y->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const float* pg = y->grad.data() + (i * c + ch) * hw;
                        float acc = 0;
                        for (std::size_t j = 0; j < hw; ++j) acc += pg[j];
                        b->grad[ch] += acc;
                    }
            }
        });
    }
    return y;
}

} // namespace

TensorPtr<float> effective_weight(Tape<float>& tape, const WeightLayer& layer) {
    switch (layer.quant) {
        case WeightQuant::None: return layer.weight;
        case WeightQuant::Ternary: return fake_quant_ternary(tape, layer.weight);
        case WeightQuant::Bits4: return fake_quant_weights_kbit(tape, layer.weight, 4);
        case WeightQuant::Bits8: return fake_quant_weights_kbit(tape, layer.weight, 8);
    }
    throw std::runtime_error("unreachable weight quant kind");
}

TensorPtr<float> activation(Tape<float>& tape, const TensorPtr<float>& x, const ActSite& site) {
    auto y = relu(tape, x);
    if (site.quant == ActQuant::Bits8) y = fake_quant_acts_kbit(tape, y, 8);
    return y;
}

TensorPtr<float> conv_forward(Tape<float>& tape, const Conv2dLayer& layer,
                              const TensorPtr<float>& x) {
    auto y = conv2d(tape, x, effective_weight(tape, layer), layer.stride, layer.pad);
    if (layer.bias) y = channel_bias_add(tape, y, layer.bias);
    return y;
}

TensorPtr<float> linear_forward(Tape<float>& tape, const LinearLayer& layer,
                                const TensorPtr<float>& x) {
    return bias_add(tape, matmul(tape, x, effective_weight(tape, layer)), layer.bias);
}

TensorPtr<float> batchnorm_forward(Tape<float>& tape, BatchNormLayer& layer,
                                   const TensorPtr<float>& x, Mode mode) {
    return batchnorm(tape, x, layer.gamma, layer.beta, layer.state, mode);
}

std::vector<TensorPtr<float>> Model::trainable_params() {
    std::vector<TensorPtr<float>> out;
    for (const auto& p : named_state())
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

std::vector<TensorPtr<float>> Model::decay_params() {
    std::vector<TensorPtr<float>> out;
    for (const auto& p : named_state())
        if (p.trainable && p.decay) out.push_back(p.tensor);
    return out;
}

void Model::set_requires_grad(bool on) {
    for (const auto& p : named_state()) {
        if (!p.trainable) continue;
        p.tensor->requires_grad = on;
        if (on)
            p.tensor->ensure_grad();
        else
            p.tensor->grad.clear();
    }
}

ModelSummary count_params_and_layers(Model& model) {
    ModelSummary s;
    for (const auto& p : model.named_state())
        if (p.trainable) s.param_count += p.tensor->numel();
    for (const auto* wl : model.weight_layers()) {
        ++s.weight_layer_count;
        s.layer_shapes.push_back({wl->name, wl->weight->shape});
    }
    return s;
}

namespace {

// ---- 6n+2 pre-activation resnet for 32x32 inputs ----
//
// Stage transitions are stride-2 3x3 convolutions in the usual same-ceil
// sense (32 -> 16). The conv primitive only accepts integral output extents,
// so transition convs run at stride 1 and are followed by an every-other-
// pixel subsample, which computes the identical quantity.
struct ResBlock {
    BatchNormLayer bn1, bn2;
    Conv2dLayer conv1, conv2;
    ActSite act1, act2;
    bool downsample = false;
    std::size_t out_channels = 0;
};

class CifarResNet final : public Model {
public:
    CifarResNet(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(Rng::derive(seed, 0x6d6f64656cull));
        const int n = spec_.n;
        conv_first_ = make_conv(rng, "conv1", 3, 16, 3, 1, 1, false);
        const std::size_t widths[3] = {16, 32, 64};
        std::size_t in_c = 16;
        for (int s = 0; s < 3; ++s) {
            for (int b = 0; b < n; ++b) {
                ResBlock blk;
                const std::string base = cat("stage", s + 1, ".block", b);
                const std::size_t out_c = widths[s];
                blk.downsample = s > 0 && b == 0;
                blk.out_channels = out_c;
                blk.bn1 = make_bn(base + ".bn1", in_c);
                blk.conv1 = make_conv(rng, base + ".conv1", in_c, out_c, 3, 1, 1, false);
                blk.bn2 = make_bn(base + ".bn2", out_c);
                blk.conv2 = make_conv(rng, base + ".conv2", out_c, out_c, 3, 1, 1, false);
                blocks_.push_back(std::move(blk));
                in_c = out_c;
            }
        }
        bn_final_ = make_bn("bn_final", 64);
        fc_ = make_linear(rng, "fc", 64, static_cast<std::size_t>(spec_.num_classes));
    }

    const ModelSpec& spec() const override { return spec_; }

    TensorPtr<float> forward(Tape<float>& tape, const TensorPtr<float>& x, Mode mode) override {
        auto h = conv_forward(tape, conv_first_, x);
        for (auto& blk : blocks_) {
            auto pre = batchnorm_forward(tape, blk.bn1, h, mode);
            pre = activation(tape, pre, blk.act1);
            auto inner = conv_forward(tape, blk.conv1, pre);
            if (blk.downsample) inner = downsample_pad_channels(tape, inner, blk.out_channels);
            inner = batchnorm_forward(tape, blk.bn2, inner, mode);
            inner = activation(tape, inner, blk.act2);
            inner = conv_forward(tape, blk.conv2, inner);
            auto shortcut = blk.downsample ? downsample_pad_channels(tape, h, blk.out_channels) : h;
            h = add(tape, inner, shortcut);
        }
        h = batchnorm_forward(tape, bn_final_, h, mode);
        h = activation(tape, h, act_final_);
        h = global_avg_pool(tape, h);
        return linear_forward(tape, fc_, h);
    }

    std::vector<NamedTensor> named_state() override {
        std::vector<NamedTensor> out;
        push_state(out, conv_first_);
        for (auto& blk : blocks_) {
            push_state(out, blk.bn1);
            push_state(out, blk.conv1);
            push_state(out, blk.bn2);
            push_state(out, blk.conv2);
        }
        push_state(out, bn_final_);
        push_state(out, fc_);
        return out;
    }

    std::vector<WeightLayer*> weight_layers() override {
        std::vector<WeightLayer*> out{&conv_first_};
        for (auto& blk : blocks_) {
            out.push_back(&blk.conv1);
            out.push_back(&blk.conv2);
        }
        out.push_back(&fc_);
        return out;
    }

    std::vector<ActSite*> activation_sites() override {
        std::vector<ActSite*> out;
        for (auto& blk : blocks_) {
            out.push_back(&blk.act1);
            out.push_back(&blk.act2);
        }
        out.push_back(&act_final_);
        return out;
    }

private:
    ModelSpec spec_;
    Conv2dLayer conv_first_;
    std::vector<ResBlock> blocks_;
    BatchNormLayer bn_final_;
    ActSite act_final_;
    LinearLayer fc_;
};

class MnistMlp final : public Model {
public:
    MnistMlp(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(Rng::derive(seed, 0x6d6f64656cull));
        for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i) {
            fcs_.push_back(make_linear(rng, cat("fc", i + 1),
                                       static_cast<std::size_t>(spec_.widths[i]),
                                       static_cast<std::size_t>(spec_.widths[i + 1])));
            if (i + 2 < spec_.widths.size()) acts_.emplace_back();
        }
    }

    const ModelSpec& spec() const override { return spec_; }

    TensorPtr<float> forward(Tape<float>& tape, const TensorPtr<float>& x, Mode) override {
        auto h = x->rank() == 2 ? x : flatten(tape, x);
        if (h->shape[1] != static_cast<std::size_t>(spec_.widths.front()))
            throw ShapeError(cat("mlp expects ", spec_.widths.front(), " inputs, got ",
                                 shape_str(h->shape)));
        for (std::size_t i = 0; i < fcs_.size(); ++i) {
            h = linear_forward(tape, fcs_[i], h);
            if (i + 1 < fcs_.size()) h = activation(tape, h, acts_[i]);
        }
        return h;
    }

    std::vector<NamedTensor> named_state() override {
        std::vector<NamedTensor> out;
        for (auto& l : fcs_) push_state(out, l);
        return out;
    }

    std::vector<WeightLayer*> weight_layers() override {
        std::vector<WeightLayer*> out;
        for (auto& l : fcs_) out.push_back(&l);
        return out;
    }

    std::vector<ActSite*> activation_sites() override {
        std::vector<ActSite*> out;
        for (auto& a : acts_) out.push_back(&a);
        return out;
    }

private:
    ModelSpec spec_;
    std::vector<LinearLayer> fcs_;
    std::vector<ActSite> acts_;
};

// Two stride-2 4x4 convs (28 -> 14 -> 7) and two fully-connected layers.
class MnistConvNet final : public Model {
public:
    MnistConvNet(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(Rng::derive(seed, 0x6d6f64656cull));
        const std::size_t c1 = static_cast<std::size_t>(spec_.widths[0]);
        const std::size_t c2 = static_cast<std::size_t>(spec_.widths[1]);
        const std::size_t hidden = static_cast<std::size_t>(spec_.widths[2]);
        conv1_ = make_conv(rng, "conv1", 1, c1, 4, 2, 1, true);
        conv2_ = make_conv(rng, "conv2", c1, c2, 4, 2, 1, true);
        fc1_ = make_linear(rng, "fc1", c2 * 7 * 7, hidden);
        fc2_ = make_linear(rng, "fc2", hidden, static_cast<std::size_t>(spec_.num_classes));
    }

    const ModelSpec& spec() const override { return spec_; }

    TensorPtr<float> forward(Tape<float>& tape, const TensorPtr<float>& x, Mode) override {
        if (x->rank() != 4 || x->shape[1] != 1 || x->shape[2] != 28 || x->shape[3] != 28)
            throw ShapeError(cat("mnist_convnet expects Nx1x28x28 input, got ",
                                 shape_str(x->shape)));
        auto h = conv_forward(tape, conv1_, x);
        h = activation(tape, h, act1_);
        h = conv_forward(tape, conv2_, h);
        h = activation(tape, h, act2_);
        h = flatten(tape, h);
        h = linear_forward(tape, fc1_, h);
        h = activation(tape, h, act3_);
        return linear_forward(tape, fc2_, h);
    }

    std::vector<NamedTensor> named_state() override {
        std::vector<NamedTensor> out;
        push_state(out, conv1_);
        push_state(out, conv2_);
        push_state(out, fc1_);
        push_state(out, fc2_);
        return out;
    }

    std::vector<WeightLayer*> weight_layers() override {
        return {&conv1_, &conv2_, &fc1_, &fc2_};
    }

    std::vector<ActSite*> activation_sites() override { return {&act1_, &act2_, &act3_}; }

private:
    ModelSpec spec_;
    Conv2dLayer conv1_, conv2_;
    LinearLayer fc1_, fc2_;
    ActSite act1_, act2_, act3_;
};

} // namespace

std::unique_ptr<Model> build_cifar_resnet(int n, int num_classes, std::uint64_t init_seed) {
    ModelSpec spec;
    spec.family = "cifar_resnet";
    spec.n = n;
    spec.num_classes = num_classes;
    return std::make_unique<CifarResNet>(std::move(spec), init_seed);
}

std::unique_ptr<Model> build_mnist_model(const ModelSpec& spec, std::uint64_t init_seed) {
    spec.validate();
    if (spec.family == "mnist_mlp") return std::make_unique<MnistMlp>(spec, init_seed);
    if (spec.family == "mnist_convnet") return std::make_unique<MnistConvNet>(spec, init_seed);
    throw ConfigError(cat("not an mnist family: ", spec.family));
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t init_seed) {
    spec.validate();
    if (spec.family == "cifar_resnet")
        return std::make_unique<CifarResNet>(spec, init_seed);
    return build_mnist_model(spec, init_seed);
}

} // namespace apprentice
