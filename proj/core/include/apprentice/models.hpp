#pragma once

#include <memory>
#include <string>
#include <vector>

#include "apprentice/ops.hpp"
#include "apprentice/quant.hpp"

namespace apprentice {

// Model zoo descriptor. cifar_resnet uses `n` (6n+2 weight layers);
// the MNIST families use `widths`: hidden sizes for the MLP,
// {conv1, conv2, fc_hidden} channels for the convnet.
struct ModelSpec {
    std::string family; // cifar_resnet | mnist_mlp | mnist_convnet
    int n = 3;
    std::vector<int> widths;
    int num_classes = 10;

    void validate() const;
    std::vector<std::size_t> input_shape() const; // {C,H,W}
    bool operator==(const ModelSpec&) const = default;
};

struct NamedTensor {
    std::string name;
    TensorPtr<float> tensor;
    bool trainable = true;
    bool decay = false; // weight-decay eligible (conv/fc weights only)
};

struct WeightLayer {
    std::string name;
    TensorPtr<float> weight;
    WeightQuant quant = WeightQuant::None;
};

struct ActSite {
    ActQuant quant = ActQuant::None;
};

struct Conv2dLayer : WeightLayer {
    std::size_t stride = 1;
    std::size_t pad = 1;
    TensorPtr<float> bias; // optional; the resnet convs run without one
};

struct LinearLayer : WeightLayer {
    TensorPtr<float> bias;
};

struct BatchNormLayer {
    std::string name;
    TensorPtr<float> gamma, beta;
    BatchNormState<float> state;
};

// Effective weight after this layer's fake-quantization node, if any.
TensorPtr<float> effective_weight(Tape<float>& tape, const WeightLayer& layer);
// ReLU followed by the site's activation quantizer, if any.
TensorPtr<float> activation(Tape<float>& tape, const TensorPtr<float>& x, const ActSite& site);

TensorPtr<float> conv_forward(Tape<float>& tape, const Conv2dLayer& layer,
                              const TensorPtr<float>& x);
TensorPtr<float> linear_forward(Tape<float>& tape, const LinearLayer& layer,
                                const TensorPtr<float>& x);
TensorPtr<float> batchnorm_forward(Tape<float>& tape, BatchNormLayer& layer,
                                   const TensorPtr<float>& x, Mode mode);

class Model {
public:
    virtual ~Model() = default;
    virtual const ModelSpec& spec() const = 0;
    virtual TensorPtr<float> forward(Tape<float>& tape, const TensorPtr<float>& x, Mode mode) = 0;
    // Parameters and running statistics in stable construction order.
    virtual std::vector<NamedTensor> named_state() = 0;
    // Conv/fully-connected layers in execution order.
    virtual std::vector<WeightLayer*> weight_layers() = 0;
    // Activation positions in execution order; all of them lie strictly
    // between the first and the last weight layer in every zoo family.
    virtual std::vector<ActSite*> activation_sites() = 0;

    std::vector<TensorPtr<float>> trainable_params();
    std::vector<TensorPtr<float>> decay_params();
    void set_requires_grad(bool on);
};

struct ModelSummary {
    std::size_t param_count = 0;       // trainable elements
    std::size_t weight_layer_count = 0;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> layer_shapes;
};

ModelSummary count_params_and_layers(Model& model);

std::unique_ptr<Model> build_cifar_resnet(int n, int num_classes, std::uint64_t init_seed);
std::unique_ptr<Model> build_mnist_model(const ModelSpec& spec, std::uint64_t init_seed);
std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t init_seed);

} // namespace apprentice
