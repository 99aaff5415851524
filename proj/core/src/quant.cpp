#include "bulkspace/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace bulkspace {

uint8_t e4m3_encode(double x) {
    if (std::isnan(x)) return 0x7F;
    uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
    double a = std::fabs(x);
    if (a == 0.0) return sign;
    if (a >= 448.0) return sign | 0x7E;

    if (a < std::ldexp(1.0, -6)) {
        // subnormal: value = m/8 * 2^-6, m in [0, 7]
        long m = std::lrint(std::ldexp(a, 9));
        if (m >= 8) return sign | 0x08; // rounded up to the smallest normal
        return sign | static_cast<uint8_t>(m);
    }

    int e2;
    std::frexp(a, &e2);
    int exp = e2 - 1; // a = g * 2^exp with g in [1, 2)
    long m = std::lrint(std::ldexp(a, 3 - exp)); // g*8, rounded to nearest even
    if (m == 16) { exp += 1; m = 8; }
    if (exp > 8 || (exp == 8 && m == 15)) return sign | 0x7E; // saturate, avoid NaN pattern
    return sign | static_cast<uint8_t>((exp + 7) << 3) | static_cast<uint8_t>(m - 8);
}

double e4m3_decode(uint8_t b) {
    uint8_t exp = (b >> 3) & 0x0F;
    uint8_t man = b & 0x07;
    double sign = (b & 0x80) ? -1.0 : 1.0;
    if (exp == 0x0F && man == 0x07) return std::numeric_limits<double>::quiet_NaN();
    if (exp == 0) return sign * std::ldexp(man / 8.0, -6);
    return sign * std::ldexp(1.0 + man / 8.0, static_cast<int>(exp) - 7);
}

QuantBlock quantize4(const Vec& v, uint32_t group_size) {
    if (group_size < 1) throw ValidationError("quantize4: group_size must be >= 1");
    if (!all_finite(v)) throw ValidationError("quantize4: non-finite entry");

    QuantBlock q;
    q.original_len = v.size();
    q.group_size = group_size;
    const std::size_t groups = q.num_groups();
    q.scales.resize(groups);
    q.zero_points.resize(groups);
    q.packed.assign((v.size() + 1) / 2, 0);

    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t lo = g * group_size;
        const std::size_t hi = std::min<std::size_t>(lo + group_size, v.size());
        double mn = v[lo], mx = v[lo];
        for (std::size_t i = lo + 1; i < hi; ++i) {
            mn = std::min(mn, v[i]);
            mx = std::max(mx, v[i]);
        }
        double scale = (mx - mn) / 15.0;
        bool degenerate = !(scale > 0.0);
        if (scale < 1e-12) scale = 1e-12;

        q.scales[g] = e4m3_encode(scale);
        q.zero_points[g] = e4m3_encode(mn);

        // Codes are chosen against the decoded scale and zero point so that
        // dequantization error stays within half a decoded step. Ranges too
        // small for E4M3 decode to a zero scale; those groups collapse to
        // the zero point like exactly-constant ones.
        double dscale = e4m3_decode(q.scales[g]);
        double dzp = e4m3_decode(q.zero_points[g]);
        if (!(dscale > 0.0)) degenerate = true;
        for (std::size_t i = lo; i < hi; ++i) {
            long code = 0;
            if (!degenerate) {
                code = std::llround((v[i] - dzp) / dscale);
                if (code < 0) code = 0;
                if (code > 15) code = 15;
            }
            if (i % 2 == 0)
                q.packed[i / 2] |= static_cast<uint8_t>(code);
            else
                q.packed[i / 2] |= static_cast<uint8_t>(code) << 4;
        }
    }
    return q;
}

Vec dequantize4(const QuantBlock& q) {
    if (q.group_size < 1) throw ValidationError("dequantize4: bad group_size");
    const std::size_t groups = q.num_groups();
    if (q.scales.size() != groups || q.zero_points.size() != groups)
        throw ValidationError("dequantize4: group metadata length mismatch");
    if (q.packed.size() != (q.original_len + 1) / 2)
        throw ValidationError("dequantize4: packed length mismatch");

    Vec v(q.original_len);
    for (std::size_t i = 0; i < q.original_len; ++i) {
        std::size_t g = i / q.group_size;
        uint8_t byte = q.packed[i / 2];
        uint8_t code = (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
        v[i] = e4m3_decode(q.scales[g]) * code + e4m3_decode(q.zero_points[g]);
    }
    return v;
}

namespace {

template <typename T>
void put_le(std::vector<uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<uint8_t>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::vector<uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw ParseError("quant_deserialize: truncated header");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        value |= static_cast<T>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return value;
}

} // namespace

std::vector<uint8_t> quant_serialize(const QuantBlock& q) {
    std::vector<uint8_t> out;
    out.reserve(12 + q.byte_size());
    put_le<uint64_t>(out, q.original_len);
    put_le<uint32_t>(out, q.group_size);
    out.insert(out.end(), q.scales.begin(), q.scales.end());
    out.insert(out.end(), q.zero_points.begin(), q.zero_points.end());
    out.insert(out.end(), q.packed.begin(), q.packed.end());
    return out;
}

QuantBlock quant_deserialize(const std::vector<uint8_t>& bytes) {
    std::size_t pos = 0;
    QuantBlock q;
    q.original_len = get_le<uint64_t>(bytes, pos);
    q.group_size = get_le<uint32_t>(bytes, pos);
    if (q.group_size < 1) throw ParseError("quant_deserialize: group_size must be >= 1");
    const std::size_t groups = q.num_groups();
    const std::size_t packed_len = (q.original_len + 1) / 2;
    if (bytes.size() != pos + 2 * groups + packed_len)
        throw ParseError("quant_deserialize: payload length mismatch");
    q.scales.assign(bytes.begin() + pos, bytes.begin() + pos + groups);
    pos += groups;
    q.zero_points.assign(bytes.begin() + pos, bytes.begin() + pos + groups);
    pos += groups;
    q.packed.assign(bytes.begin() + pos, bytes.end());
    return q;
}

} // namespace bulkspace
