#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apprentice/models.hpp"
#include "apprentice/quant.hpp"

namespace apprentice {

// Bit-packed weight tensor. Elements sit LSB-first: element 0 occupies the
// lowest-order bits of byte 0. Ternary code table: 00 -> 0, 01 -> +1,
// 10 -> -1; 11 is invalid. 4/8-bit payloads store grid indices biased by
// +(2^(k-1)-1) so they fit unsigned.
struct PackedTensor {
    int bits = 2; // one of {2, 4, 8}
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> payload; // ceil(numel*bits/8) bytes
    double scale = 0;                  // ternary layer scale, or k-bit grid step

    std::size_t numel() const { return shape_numel(shape); }
};

PackedTensor pack_ternary(const std::vector<std::int8_t>& codes,
                          std::vector<std::size_t> shape, double scale);
std::vector<std::int8_t> unpack_ternary(const PackedTensor& t);

PackedTensor pack_indices(const std::vector<std::uint16_t>& indices, int bits,
                          std::vector<std::size_t> shape, double scale);
std::vector<std::uint16_t> unpack_indices(const PackedTensor& t);

// y_i = scale * (sum of x_j where code +1  -  sum of x_j where code -1).
// The accumulation loop routes on signs; the only multiply is the final
// per-row scale.
std::vector<float> ternary_matvec(const PackedTensor& w, std::span<const float> x);

// ---- "APQZ" quantized checkpoint ----
//
// magic "APQZ" | u32 version | u32 record count | records of
// (name, rank + extents, u32 bits, f64 scale, u64 payload length, payload).
// bits=32 records carry raw little-endian float32 (exempt layers, biases,
// normalization state); bits in {2,4,8} carry packed codes/indices.

struct QuantRecord {
    std::string name;
    std::vector<std::size_t> shape;
    int bits = 32;
    double scale = 0;
    std::vector<std::uint8_t> payload;
};

struct QuantizedCheckpoint {
    ModelSpec spec; // not serialized; carried alongside for executors
    std::vector<QuantRecord> records;

    const QuantRecord* find(const std::string& name) const;
};

// Packs every quantized weight layer per its policy and stores everything
// else at full precision. The model must already carry its quantization
// policy (apply_policy).
QuantizedCheckpoint export_quantized(Model& model);
void write_quantized(const std::string& path, const QuantizedCheckpoint& ckpt);
QuantizedCheckpoint read_quantized(const std::string& path, const ModelSpec& spec);

// Inference over a quantized checkpoint: ternary layers run the sign-routed
// kernels, k-bit layers run dense kernels over dequantized grids, exempt
// layers run the exact float path of the training graph.
class PackedExecutor {
public:
    PackedExecutor(QuantizedCheckpoint ckpt, QuantSpec quant);

    // x is [N,C,H,W] as produced by the data pipeline; returns [N,classes].
    Tensor<float> logits(const Tensor<float>& x) const;

private:
    QuantizedCheckpoint ckpt_;
    QuantSpec quant_;
};

} // namespace apprentice
