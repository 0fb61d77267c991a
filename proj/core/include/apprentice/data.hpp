#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "apprentice/tensor.hpp"

namespace apprentice {

// One labelled image. `id` is the position in canonical file order and is
// the stable key for logit caches.
struct Sample {
    std::int64_t id = 0;
    Tensor<float> image; // [C,H,W], values in [0,1] before normalization
    int label = 0;
};

struct Dataset {
    std::string name;
    int num_classes = 10;
    std::vector<std::size_t> image_shape; // {C,H,W}
    std::vector<Sample> samples;
};

// Per-channel normalization constants, always computed from a training
// split and reused verbatim for eval.
struct NormStats {
    std::vector<float> mean;
    std::vector<float> stddev;
};

Dataset read_mnist(const std::string& images_path, const std::string& labels_path);
Dataset read_cifar10(const std::vector<std::string>& batch_files);

NormStats compute_norm_stats(const Dataset& train);

// First k ids of every class, a deterministic subset that needs no seed.
Dataset subset_per_class(const Dataset& d, int k);

struct DataConfig {
    std::string dir;
    std::string dataset = "mnist"; // mnist | cifar10
    int subset_per_class = 0;      // 0 = all
    bool augment = false;
};

Dataset load_split(const DataConfig& cfg, bool train);

struct Batch {
    std::vector<std::int64_t> ids;
    std::vector<int> labels;
    TensorPtr<float> input;  // [N,C,H,W], normalized
    TensorPtr<float> onehot; // [N,num_classes]
};

// Deterministic batch stream: a fixed (seed, shuffle, augment) triple always
// yields the same sequence of batches. Augmentation is the standard CIFAR
// recipe (pad-4, random crop, random horizontal flip) and is rejected for
// other image shapes.
class BatchIterator {
public:
    BatchIterator(const Dataset& data, const NormStats& stats, int num_classes,
                  std::size_t batch_size, std::uint64_t seed, bool shuffle, bool augment);

    std::optional<Batch> next();
    void restart(std::uint64_t seed);
    std::size_t batches_per_epoch() const;

private:
    const Dataset& data_;
    NormStats stats_;
    int num_classes_;
    std::size_t batch_size_;
    bool shuffle_;
    bool augment_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t seed_ = 0;
};

} // namespace apprentice
