#pragma once

#include <cstdint>
#include <string>

#include "apprentice/tensor.hpp"

namespace apprentice {

// Procedurally rendered digit corpus in the exact idx file layout of MNIST
// (train-images-idx3-ubyte etc.). Ten segment-style glyph classes with
// random placement, size and stroke jitter plus Gaussian pixel noise; useful
// for smoke tests and CI-scale experiments on machines without the real
// datasets. noise_sigma around 0.25-0.35 leaves visible headroom between
// small and large models.
struct SyntheticConfig {
    int train_count = 8000;
    int test_count = 2000;
    std::uint64_t seed = 7;
    double noise_sigma = 0.30;
    int max_shift = 3;
};

void write_synthetic_mnist(const std::string& dir, const SyntheticConfig& cfg);

// Single rendered glyph, exposed for tests.
Tensor<float> render_synthetic_digit(int digit, std::uint64_t draw_seed, double noise_sigma,
                                     int max_shift);

} // namespace apprentice
