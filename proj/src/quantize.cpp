#include "cmp/quantize.hpp"
#include <algorithm>

#include <cmath>

namespace cmp {

namespace {

// byte -> eight {-1,+1} doubles, LSB first.
struct ByteSigns {
    alignas(64) double rows[256][8];
    ByteSigns() {
        for (int b = 0; b < 256; ++b)
            for (int j = 0; j < 8; ++j) rows[b][j] = (b >> j) & 1 ? 1.0 : -1.0;
    }
};
const ByteSigns kByteSigns;

}  // namespace

void PackedTable::unpack_row(std::uint64_t row, double* out) const {
    const std::uint8_t* src = bits.data() + row * row_bytes();
    int j = 0;
    for (std::size_t byte = 0; byte < row_bytes(); ++byte) {
        const double* decoded = kByteSigns.rows[src[byte]];
        const int take = std::min(8, feature_dim - j);
        for (int t = 0; t < take; ++t) out[j + t] = decoded[t];
        j += take;
    }
}

std::vector<double> binarize(std::span<const double> table) {
    std::vector<double> out(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (!std::isfinite(table[i])) throw ConfigError("binarize: non-finite entry");
        out[i] = table[i] < 0.0 ? -1.0 : 1.0;
    }
    return out;
}

std::vector<double> ste_grad(std::span<const double> upstream) {
    return std::vector<double>(upstream.begin(), upstream.end());
}

PackedTable pack_bits(std::span<const double> sign_table, std::uint64_t table_len,
                      int feature_dim) {
    if (feature_dim < 1) throw ConfigError("pack_bits: feature_dim must be >= 1");
    if (sign_table.size() != table_len * static_cast<std::uint64_t>(feature_dim))
        throw ConfigError("pack_bits: table size does not match table_len * d");

    PackedTable p;
    p.table_len = table_len;
    p.feature_dim = feature_dim;
    p.bits.assign(p.byte_size(), 0);
    const std::size_t rb = p.row_bytes();
    for (std::uint64_t r = 0; r < table_len; ++r) {
        std::uint8_t* dst = p.bits.data() + r * rb;
        for (int j = 0; j < feature_dim; ++j) {
            const double v = sign_table[r * feature_dim + j];
            if (v == 1.0) {
                dst[j >> 3] |= static_cast<std::uint8_t>(1u << (j & 7));
            } else if (v != -1.0) {
                throw ConfigError("pack_bits: entries must be exactly -1 or +1");
            }
        }
    }
    return p;
}

std::vector<double> unpack_bits(const PackedTable& packed) {
    if (packed.bits.size() != packed.byte_size())
        throw FormatError("unpack_bits: buffer length mismatch");
    std::vector<double> out(packed.table_len * static_cast<std::uint64_t>(packed.feature_dim));
    for (std::uint64_t r = 0; r < packed.table_len; ++r)
        packed.unpack_row(r, out.data() + r * packed.feature_dim);
    return out;
}

MemoryReport memory_report(const HashGridParams& params, bool binarized) {
    const double area = params.coverage.area_km2();
    if (!(area > 0.0)) throw ConfigError("memory_report: coverage area must be > 0");

    MemoryReport rep;
    const std::uint64_t d = static_cast<std::uint64_t>(params.feature_dim);
    for (const auto& lvl : params.levels) {
        const std::uint64_t bytes =
            binarized ? lvl.table_len * ((d + 7) / 8) : lvl.table_len * d * 4;
        rep.per_level_bytes.push_back(bytes);
        rep.total_bytes += bytes;
    }
    rep.kb_per_km2 = rep.total_kb() / area;
    return rep;
}

}  // namespace cmp
