#pragma once

#include <string>
#include <vector>

#include "apprentice/models.hpp"

namespace apprentice {

// Per-weight-layer element counts for inference memory accounting.
struct LayerShapeRow {
    std::string name;
    std::size_t ifm_elems = 0;    // input feature map, batch 1
    std::size_t ofm_elems = 0;    // output feature map, batch 1
    std::size_t weight_elems = 0; // kernel plus bias when the layer has one
};

using LayerTable = std::vector<LayerShapeRow>;

// Shipped tables for well-known ImageNet networks at 224x224 inputs,
// generated from their public architectures.
std::vector<std::string> available_layer_tables();
LayerTable named_layer_table(const std::string& name); // throws ConfigError listing options

// Table for a zoo model spec (32x32 or 28x28 inputs per family).
LayerTable model_layer_table(const ModelSpec& spec);

struct FootprintRow {
    std::string name;
    std::size_t ifm_elems, ofm_elems, weight_elems;
    int weight_bits;
    double ifm_bytes, ofm_bytes, weight_bytes; // at batch 1
};

struct FootprintTotals {
    int batch;
    double max_ifm_bytes, max_ofm_bytes, weight_bytes, total_bytes;
};

// Inference memory model: total = max(IFM) + max(OFM) over layers, at the
// activation precision and batch size, plus the sum of all weight tensors at
// their per-layer precision. Weight bytes do not scale with batch.
struct FootprintReport {
    int act_bits = 32;
    std::vector<FootprintRow> rows;
    std::vector<FootprintTotals> totals;

    double weight_total_bytes() const;
};

FootprintReport footprint(const LayerTable& table, const std::vector<int>& weight_bits_per_layer,
                          int act_bits, const std::vector<int>& batch_sizes);

// Uniform per-layer bit assignment, optionally keeping the first and last
// layers at full precision.
std::vector<int> uniform_weight_bits(const LayerTable& table, int bits, bool exempt_first_last);

// Size-equivalence between a low-precision dense model and a sparse
// full-precision one. raw solves (1-s)*32 = bits; index_adjusted charges
// index_bits per surviving value: (1-s)*(32+index_bits) = bits.
struct SparsityEquivalence {
    double raw;
    double index_adjusted;
};

SparsityEquivalence sparse_equivalence(int weight_bits, int index_bits = 16);

std::string render_footprint_table(const FootprintReport& report);

} // namespace apprentice
