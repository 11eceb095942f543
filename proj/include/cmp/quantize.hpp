#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmp/error.hpp"
#include "cmp/grid_codec.hpp"

namespace cmp {

// Bit-packed sign table. Each row's d sign bits are packed LSB-first
// (+1 -> 1, -1 -> 0) and padded to a byte boundary, so the buffer holds
// exactly table_len * ceil(d/8) bytes. This layout is normative for the
// CMPP file format.
struct PackedTable {
    std::uint64_t table_len = 0;
    int feature_dim = 0;
    std::vector<std::uint8_t> bits;

    std::size_t row_bytes() const { return (static_cast<std::size_t>(feature_dim) + 7) / 8; }
    std::size_t byte_size() const { return table_len * row_bytes(); }

    // Decodes one row into d values in {-1, +1}.
    void unpack_row(std::uint64_t row, double* out) const;
};

// sign(t) elementwise with sign(0) = +1. Throws ConfigError on non-finite
// entries.
std::vector<double> binarize(std::span<const double> table);

// Straight-through estimator backward: the gradient w.r.t. the binarized
// values passes through to the real-valued parameters unchanged.
std::vector<double> ste_grad(std::span<const double> upstream);

// Entries must be exactly -1 or +1.
PackedTable pack_bits(std::span<const double> sign_table, std::uint64_t table_len, int feature_dim);

// Lossless inverse of pack_bits. Throws FormatError when the buffer length
// does not match table_len * ceil(d/8).
std::vector<double> unpack_bits(const PackedTable& packed);

struct MemoryReport {
    std::vector<std::uint64_t> per_level_bytes;
    std::uint64_t total_bytes = 0;
    double kb_per_km2 = 0.0;

    double total_kb() const { return static_cast<double>(total_bytes) / 1024.0; }
};

// Storage accounting for the embedding tables: one bit per entry (row-padded
// to bytes) when binarized, 32-bit reals otherwise.
MemoryReport memory_report(const HashGridParams& params, bool binarized);

}  // namespace cmp
