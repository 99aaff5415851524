#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

#include "bulkspace/errors.hpp"
#include "bulkspace/vec.hpp"

namespace bulkspace {

// 8-bit float, 4 exponent bits, 3 mantissa bits, bias 7. No infinities; the
// all-ones exponent+mantissa pattern is NaN (either sign). Largest finite
// value is 448, smallest subnormal 2^-9. Encoding rounds to nearest even and
// saturates above 448.
uint8_t e4m3_encode(double x);
double e4m3_decode(uint8_t b);

// Group-wise asymmetric 4-bit quantization of a vector. Each group of
// group_size consecutive elements stores an E4M3 scale and zero point plus
// one nibble per element; nibbles pack two per byte, earlier element in the
// low nibble.
struct QuantBlock {
    uint64_t original_len = 0;
    uint32_t group_size = 0;
    std::vector<uint8_t> scales;       // one E4M3 byte per group
    std::vector<uint8_t> zero_points;  // one E4M3 byte per group
    std::vector<uint8_t> packed;       // ceil(original_len / 2) bytes

    std::size_t num_groups() const {
        return group_size ? (original_len + group_size - 1) / group_size : 0;
    }
    // Bytes this block occupies at rest.
    std::size_t byte_size() const {
        return scales.size() + zero_points.size() + packed.size();
    }
};

QuantBlock quantize4(const Vec& v, uint32_t group_size);
Vec dequantize4(const QuantBlock& q);

// Binary layout: u64 LE original_len, u32 LE group_size, scale bytes,
// zero-point bytes, packed nibbles.
std::vector<uint8_t> quant_serialize(const QuantBlock& q);
QuantBlock quant_deserialize(const std::vector<uint8_t>& bytes);

} // namespace bulkspace
